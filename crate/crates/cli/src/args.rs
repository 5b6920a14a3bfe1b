use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ivasim", version, about = "Consumption-tax incidence microsimulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the revenue-neutral reference rate.
    Solve(SolveArgs),
    /// Write the budget-share, rate-impact and scenario tables.
    Tables(TablesArgs),
    /// Check a schedule and population against every invariant.
    Validate(InputArgs),
    /// Write a synthetic household CSV.
    Generate(GenerateArgs),
}

/// Synthetic population addressed as `seed:size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Synthetic {
    pub seed: u64,
    pub households: usize,
}

pub fn parse_synthetic(s: &str) -> Result<Synthetic, String> {
    let (seed, n) = s
        .split_once(':')
        .ok_or_else(|| format!("expected seed:size, got `{s}`"))?;
    let seed = seed
        .trim()
        .parse()
        .map_err(|_| format!("seed `{seed}` is not a non-negative integer"))?;
    let households: usize = n
        .trim()
        .parse()
        .map_err(|_| format!("size `{n}` is not a non-negative integer"))?;
    if households == 0 {
        return Err("size must be at least 1".into());
    }
    Ok(Synthetic { seed, households })
}

#[derive(Debug, Clone, Args)]
#[group(id = "population", required = true, multiple = false)]
pub struct PopulationSource {
    /// Household CSV (id, weight, residents, income_pc, nonmonetary_total, one column per category).
    #[arg(long, value_name = "CSV")]
    pub households: Option<PathBuf>,
    /// Synthetic population instead of a CSV.
    #[arg(long, value_name = "SEED:N", value_parser = parse_synthetic)]
    pub synthetic: Option<Synthetic>,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Schedule JSON; the bundled PLP 68 schedule when omitted.
    #[arg(long, value_name = "JSON")]
    pub schedule: Option<PathBuf>,
    #[command(flatten)]
    pub population: PopulationSource,
    /// Override the schedule's target net burden.
    #[arg(long, value_name = "SHARE")]
    pub target_burden: Option<f64>,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExecArgs {
    /// Worker threads for per-household work (0 = rayon default).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub threads: usize,
    /// Evaluate households sequentially.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory for trace.csv.
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
    /// Write the fixed-point iteration trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwapModeArg {
    /// Keep the PLP 68 rate, transfer the extra revenue.
    HoldRate,
    /// Transfer the food basket's revenue and re-solve the rate.
    Resolve,
}

#[derive(Debug, Args)]
pub struct TablesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory.
    #[arg(long, default_value = "ivasim-out", value_name = "DIR")]
    pub out: PathBuf,
    /// Treatment group to remove in the rate-impact table (repeatable;
    /// comma-separated group ids, category ids or kind:<treatment>).
    #[arg(long = "remove", value_name = "SELECTOR")]
    pub removals: Vec<String>,
    /// Scenario to include (repeatable): baseline, uniform_vat, plp68, plp68_transfer_swap.
    #[arg(long = "scenario", value_name = "NAME")]
    pub scenarios: Vec<String>,
    /// How the transfer-swap scenario is balanced.
    #[arg(long, value_enum, default_value_t = SwapModeArg::HoldRate)]
    pub swap_mode: SwapModeArg,
    /// Write the fixed-point iteration trace of the with-cashback solve.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Schedule whose categories and Engel profiles drive the generator.
    #[arg(long, value_name = "JSON")]
    pub schedule: Option<PathBuf>,
    #[arg(long, value_name = "SEED:N", value_parser = parse_synthetic)]
    pub synthetic: Synthetic,
    /// Output CSV; standard output when omitted.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}
