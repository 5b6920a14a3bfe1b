mod args;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use ivasim_core::analysis::{
    assign_quintiles, budget_share_table, render_impact_table, render_scenario_table,
    render_share_table, AnalysisError, Rendered, ScenarioKind, ScenarioOptions, ScenarioRunner,
    SwapMode, QUINTILES,
};
use ivasim_core::engine::{check_alignment, household_cashback, household_tax, EngineError};
use ivasim_core::microdata::DataError;
use ivasim_core::schedule::ScheduleError;
use ivasim_core::solver::{
    marginal_rate_impact, solve_with_cashback, ImpactKind, SolveError, RESIDUAL_TOLERANCE,
};
use ivasim_core::{generate_synthetic, par, Evaluator, ExecMode, Population, Rate, Schedule, Selector};

use args::{Cli, Command, ExecArgs, GenerateArgs, InputArgs, SolveArgs, SwapModeArg, TablesArgs};

const BUNDLED_SCHEDULE: &str = "<bundled plp68>";

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("households: {0}")]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} validation check(s) failed")]
    Validation(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Solve(SolveError::NoConvergence { .. })
            | CliError::Analysis(AnalysisError::Solve(SolveError::NoConvergence { .. })) => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let exec = match &command {
        Command::Solve(a) => a.input.exec.clone(),
        Command::Tables(a) => a.input.exec.clone(),
        Command::Validate(a) => a.exec.clone(),
        Command::Generate(_) => ExecArgs {
            threads: 0,
            sequential: true,
        },
    };
    let work = move || match command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Tables(a) => cmd_tables(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Generate(a) => cmd_generate(&a),
    };
    if exec.threads > 0 && !exec.sequential {
        par::with_threads(exec.threads, work)
    } else {
        work()
    }
}

fn exec_mode(exec: &ExecArgs) -> ExecMode {
    if exec.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

fn load_schedule(path: Option<&Path>) -> Result<Schedule, CliError> {
    Ok(match path {
        Some(p) => Schedule::load(p)?,
        None => Schedule::plp68(),
    })
}

struct Inputs {
    schedule: Schedule,
    population: Population,
    target: f64,
}

fn load_inputs(a: &InputArgs) -> Result<Inputs, CliError> {
    let mut schedule = load_schedule(a.schedule.as_deref())?;
    if let Some(t) = a.target_burden {
        schedule = schedule.with_target(t)?;
    }
    let population = match (&a.population.households, a.population.synthetic) {
        (Some(path), _) => Population::load(path, &schedule)?,
        (None, Some(s)) => generate_synthetic(s.seed, s.households, &schedule)?,
        (None, None) => return Err(CliError::Usage("no population source given".into())),
    };
    let target = schedule.target_net_burden();
    Ok(Inputs {
        schedule,
        population,
        target,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn cmd_solve(a: &SolveArgs) -> Result<(), CliError> {
    let inputs = load_inputs(&a.input)?;
    let ev = Evaluator::new(&inputs.population, &inputs.schedule)?.with_mode(exec_mode(&a.input.exec));
    let result = match solve_with_cashback(&ev, inputs.target) {
        Ok(r) => r,
        Err(e) => {
            if let (true, SolveError::NoConvergence { trace, .. }) = (a.trace, &e) {
                write_trace(&a.out, &ivasim_core::solver::trace_csv(trace))?;
            }
            return Err(e.into());
        }
    };
    println!("target net burden: {:.4}", inputs.target);
    println!(
        "reference rate: {:.4} outside, {:.4} inside",
        result.t_ref.value(),
        result.t_ref_inside.value()
    );
    println!("iterations: {}", result.iterations);
    println!("residual: {:.3e}", result.residual);
    println!("cashback total: {:.2}", result.cashback_total);
    if a.trace {
        let path = write_trace(&a.out, &result.trace_csv())?;
        println!("trace: {}", path.display());
    }
    Ok(())
}

fn write_trace(dir: &Path, csv: &str) -> Result<PathBuf, CliError> {
    create_dir(dir)?;
    let path = dir.join("trace.csv");
    write_file(&path, csv.as_bytes())?;
    Ok(path)
}

fn population_json(a: &InputArgs) -> serde_json::Value {
    match (&a.population.households, a.population.synthetic) {
        (Some(p), _) => json!({ "source": "file", "path": p.display().to_string() }),
        (None, Some(s)) => json!({ "source": "synthetic", "seed": s.seed, "households": s.households }),
        (None, None) => serde_json::Value::Null,
    }
}

fn cmd_tables(a: &TablesArgs) -> Result<(), CliError> {
    let inputs = load_inputs(&a.input)?;
    let (schedule, pop) = (&inputs.schedule, &inputs.population);
    let ev = Evaluator::new(pop, schedule)?.with_mode(exec_mode(&a.input.exec));

    let removals: Vec<Selector> = if a.removals.is_empty() {
        schedule.default_removals()
    } else {
        a.removals
            .iter()
            .map(|s| s.parse::<Selector>())
            .collect::<Result<_, _>>()?
    };
    for r in &removals {
        schedule.resolve(r)?;
    }
    let scenarios: Vec<ScenarioKind> = if a.scenarios.is_empty() {
        ScenarioKind::ALL.to_vec()
    } else {
        a.scenarios
            .iter()
            .map(|s| s.parse::<ScenarioKind>())
            .collect::<Result<_, _>>()?
    };
    let options = ScenarioOptions {
        swap_mode: match a.swap_mode {
            SwapModeArg::HoldRate => SwapMode::HoldRate,
            SwapModeArg::Resolve => SwapMode::Resolve,
        },
        ..ScenarioOptions::default()
    };

    let quintiles = assign_quintiles(pop);
    let shares = budget_share_table(pop, schedule, &quintiles);
    let impacts = marginal_rate_impact(&ev, &removals, inputs.target)?;
    let outcomes = ScenarioRunner::new(&ev, &quintiles, options)?.run_all(&scenarios)?;

    let tables: [(&str, Rendered); 3] = [
        ("table1_budget_shares", render_share_table(&shares)),
        ("table2_rate_impacts", render_impact_table(&impacts)?),
        ("table3_scenarios", render_scenario_table(&outcomes)?),
    ];

    create_dir(&a.out)?;
    let mut files = serde_json::Map::new();
    for (stem, rendered) in &tables {
        for (ext, body) in [("csv", &rendered.csv), ("txt", &rendered.text)] {
            let name = format!("{stem}.{ext}");
            write_file(&a.out.join(&name), body.as_bytes())?;
            files.insert(name, json!(sha256_hex(body.as_bytes())));
        }
    }
    if a.trace {
        let result = solve_with_cashback(&ev, inputs.target)?;
        let csv = result.trace_csv();
        write_file(&a.out.join("trace.csv"), csv.as_bytes())?;
        files.insert("trace.csv".into(), json!(sha256_hex(csv.as_bytes())));
    }

    let config = json!({
        "command": "tables",
        "schedule": a.input.schedule.as_ref().map_or(BUNDLED_SCHEDULE.to_string(), |p| p.display().to_string()),
        "population": population_json(&a.input),
        "target_burden": inputs.target,
        "removals": removals.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        "scenarios": scenarios.iter().map(|k| k.name()).collect::<Vec<_>>(),
        "swap_mode": a.swap_mode,
        "trace": a.trace,
    });
    let config_text = serde_json::to_string(&config).expect("json value");
    let mut csv = Vec::new();
    pop.write_csv(&mut csv)?;
    let manifest = json!({
        "tool": "ivasim",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": ivasim_core::VERSION,
        "config": config,
        "config_hash": sha256_hex(config_text.as_bytes()),
        "schedule_fingerprint": schedule.fingerprint(),
        "population_fingerprint": sha256_hex(&csv),
        "households": pop.len(),
        "files": files,
    });
    let mut manifest_text = serde_json::to_string_pretty(&manifest).expect("json value");
    manifest_text.push('\n');
    write_file(&a.out.join("manifest.json"), manifest_text.as_bytes())?;

    let base = impacts.first().map(|r| r.rate);
    let with_cb = impacts
        .iter()
        .find(|r| r.kind == ImpactKind::WithCashback)
        .map(|r| r.rate);
    println!(
        "table1_budget_shares: {} groups x {} quintiles",
        shares.groups.len(),
        QUINTILES
    );
    println!(
        "table2_rate_impacts: {} rows; reference rate {} without cashback, {} with cashback",
        impacts.len(),
        fmt_rate(base),
        fmt_rate(with_cb)
    );
    let worst_gap = outcomes
        .iter()
        .map(|o| o.neutrality_gap.abs())
        .fold(0.0, f64::max);
    println!(
        "table3_scenarios: {} scenarios; largest neutrality gap {:.1e}",
        outcomes.len(),
        worst_gap
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn fmt_rate(r: Option<Rate>) -> String {
    r.map_or("NA".into(), |r| {
        format!("{:.4} ({:.4} inside)", r.value(), r.to_inside().value())
    })
}

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, outcome: Result<String, String>) -> bool {
        match outcome {
            Ok(detail) => {
                println!("PASS {name}: {detail}");
                true
            }
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                self.failed += 1;
                false
            }
        }
    }
}

fn cmd_validate(a: &InputArgs) -> Result<(), CliError> {
    let mut report = Report { failed: 0 };

    let schedule = match load_schedule(a.schedule.as_deref()) {
        Ok(s) => s,
        Err(e) => {
            report.check("schedule", Err(e.to_string()));
            return Err(CliError::Validation(report.failed));
        }
    };
    report.check(
        "schedule",
        Ok(format!(
            "{} categories in {} groups, fingerprint {}",
            schedule.categories().len(),
            schedule.groups().len(),
            &schedule.fingerprint()[..12]
        )),
    );
    let schedule = match a.target_burden.map(|t| schedule.with_target(t)).transpose() {
        Ok(s) => s.unwrap_or(schedule),
        Err(e) => {
            report.check("target_burden", Err(e.to_string()));
            return Err(CliError::Validation(report.failed));
        }
    };
    report.check(
        "schedule_round_trip",
        match Schedule::from_json_str(&schedule.to_json_pretty(), "re-serialized schedule") {
            Ok(s) if s.spec() == schedule.spec() => Ok("re-serialized schedule is identical".into()),
            Ok(_) => Err("re-serialized schedule differs".into()),
            Err(e) => Err(e.to_string()),
        },
    );

    let pop = match (&a.population.households, a.population.synthetic) {
        (Some(path), _) => Population::load(path, &schedule),
        (None, Some(s)) => generate_synthetic(s.seed, s.households, &schedule),
        (None, None) => return Err(CliError::Usage("no population source given".into())),
    };
    let pop = match pop {
        Ok(p) => p,
        Err(e) => {
            report.check("households", Err(e.to_string()));
            return Err(CliError::Validation(report.failed));
        }
    };
    report.check(
        "households",
        Ok(format!("{} households, {:.0} weighted persons", pop.len(), pop.weighted_persons())),
    );
    if !report.check(
        "category_alignment",
        check_alignment(&pop, &schedule)
            .map(|_| "household columns match schedule categories".into())
            .map_err(|e| e.to_string()),
    ) {
        return Err(CliError::Validation(report.failed));
    }
    let ev = match Evaluator::new(&pop, &schedule) {
        Ok(ev) => ev.with_mode(exec_mode(&a.exec)),
        Err(e) => {
            report.check("denominator", Err(e.to_string()));
            return Err(CliError::Validation(report.failed));
        }
    };
    report.check("denominator", Ok(format!("{:.2} per month", ev.denominator())));

    let q = assign_quintiles(&pop);
    let total_w: f64 = pop.households().iter().map(|h| h.weight).sum();
    let max_w = pop.households().iter().map(|h| h.weight).fold(0.0, f64::max);
    let slack = max_w / total_w;
    let worst = q.weight_share.iter().map(|s| (s - 0.2).abs()).fold(0.0, f64::max);
    report.check(
        "quintile_balance",
        if worst <= slack + 1e-12 {
            Ok(format!("max |share - 0.2| = {worst:.2e} <= {slack:.2e}"))
        } else {
            Err(format!("max |share - 0.2| = {worst:.2e} exceeds {slack:.2e}"))
        },
    );

    let shares = budget_share_table(&pop, &schedule, &q);
    let sums = shares.column_sums();
    let bad: Vec<String> = sums
        .iter()
        .filter(|s| (*s - 100.0).abs() > 0.01)
        .map(|s| format!("{s:.4}"))
        .collect();
    report.check(
        "share_closure",
        if bad.is_empty() {
            Ok("every budget-share column sums to 100".into())
        } else {
            Err(format!("columns sum to {}", bad.join(", ")))
        },
    );

    let lo = ev.gross_revenue(Rate::outside(0.2).expect("constant"));
    let hi = ev.gross_revenue(Rate::outside(0.4).expect("constant"));
    report.check(
        "revenue_increasing",
        if hi > lo {
            Ok("gross revenue rises with the reference rate".into())
        } else {
            Err("gross revenue does not rise with the reference rate".into())
        },
    );

    match solve_with_cashback(&ev, schedule.target_net_burden()) {
        Ok(r) => {
            report.check(
                "solve",
                if r.residual <= RESIDUAL_TOLERANCE {
                    Ok(format!(
                        "reference rate {:.4} outside after {} iterations, residual {:.1e}",
                        r.t_ref.value(),
                        r.iterations,
                        r.residual
                    ))
                } else {
                    Err(format!("residual {:.1e}", r.residual))
                },
            );
            let over = pop
                .households()
                .iter()
                .map(|h| {
                    let inc = household_tax(h, &schedule, r.t_ref);
                    (h.id, household_cashback(h, &inc, &schedule) - inc.gross_tax)
                })
                .find(|(_, excess)| *excess > 1e-9);
            report.check(
                "cashback_bounded",
                match over {
                    None => Ok("cashback never exceeds gross tax".into()),
                    Some((id, _)) => Err(format!("household {id} receives more cashback than it pays")),
                },
            );
        }
        Err(e) => {
            report.check("solve", Err(e.to_string()));
        }
    }

    if report.failed == 0 {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Validation(report.failed))
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let schedule = load_schedule(a.schedule.as_deref())?;
    let pop = generate_synthetic(a.synthetic.seed, a.synthetic.households, &schedule)?;
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            pop.save(path)?;
            eprintln!("wrote {} households to {}", pop.len(), path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            pop.write_csv(&mut lock)?;
            let _ = lock.flush();
        }
    }
    Ok(())
}
