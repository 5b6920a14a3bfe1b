//! Revenue-neutral reference rate.
//!
//! The reference rate is chosen so that aggregate net revenue (gross tax
//! less cashback) is a target share of monetary consumption. Cashback itself
//! depends on the rate, so the solve alternates: solve the rate with cashback
//! held fixed, recompute cashback at that rate, and repeat until the rate
//! moves by less than [`FIXED_POINT_TOLERANCE`].
//!
//! The inner solve is bisection on the outside rate, starting from `[0, 5]`
//! and doubling the upper end until the target is bracketed.

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{EngineError, Evaluator};
use crate::rates::Rate;
use crate::schedule::{ScheduleError, Selector};

/// Width of the final bisection interval on the outside rate.
pub const RATE_TOLERANCE: f64 = 1e-12;
/// Outer iterations stop once the outside rate changes by less than this.
pub const FIXED_POINT_TOLERANCE: f64 = 1e-8;
pub const MAX_OUTER_ITERATIONS: usize = 100;
/// Largest accepted |net burden − target| at the returned rate.
pub const RESIDUAL_TOLERANCE: f64 = 1e-7;

const INITIAL_UPPER: f64 = 5.0;
const MAX_UPPER: f64 = 5.0 * 1024.0;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("target burden {target} is outside the achievable range [{min_burden:.6}, {max_burden:.6}]")]
    Unreachable {
        target: f64,
        min_burden: f64,
        max_burden: f64,
    },
    #[error("reference rate did not converge after {iterations} iterations (last change {last_change:e}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        residual: f64,
        trace: Vec<TraceRow>,
    },
    #[error("target burden {0} must be finite and lie in [0, 1)")]
    Target(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// One outer iteration of the fixed-point solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Outside reference rate found in this iteration.
    pub t_ref: f64,
    /// Cashback (plus any other outlay) held fixed while solving for `t_ref`.
    pub cashback_total: f64,
    /// Net burden at `t_ref` with cashback recomputed at `t_ref`.
    pub net_burden: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub t_ref: Rate,
    pub t_ref_inside: Rate,
    /// Outer iterations after the initial cashback-free solve.
    pub iterations: usize,
    /// |net burden − target| with cashback evaluated at `t_ref`.
    pub residual: f64,
    /// Cashback (plus outlay) at `t_ref`.
    pub cashback_total: f64,
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    /// Iteration trace as CSV: `iter,t_ref_outside,cashback_total,net_burden`.
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,t_ref_outside,cashback_total,net_burden\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{:.12},{:.6},{:.12}",
            r.iteration, r.t_ref, r.cashback_total, r.net_burden
        );
    }
    out
}

/// Root of a non-decreasing `f` on `[lo, hi]`, given `f(lo) <= 0 <= f(hi)`.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_target(target: f64) -> Result<(), SolveError> {
    if target.is_finite() && (0.0..1.0).contains(&target) {
        Ok(())
    } else {
        Err(SolveError::Target(target))
    }
}

fn outside(t: f64) -> Rate {
    Rate::outside(t).expect("solver rates are finite and non-negative")
}

/// Outside reference rate at which `(gross − fixed_outlay) / denominator`
/// equals `target`, with the outlay held constant.
pub fn solve_given_cashback(ev: &Evaluator<'_>, fixed_outlay: f64, target: f64) -> Result<Rate, SolveError> {
    check_target(target)?;
    let denominator = ev.denominator();
    let gap = |t: f64| (ev.gross_revenue(outside(t)) - fixed_outlay) / denominator - target;

    let at_zero = gap(0.0);
    if at_zero == 0.0 {
        return Ok(Rate::ZERO_OUTSIDE);
    }
    if at_zero > 0.0 {
        return Err(SolveError::Unreachable {
            target,
            min_burden: at_zero + target,
            max_burden: gap(MAX_UPPER) + target,
        });
    }
    let mut hi = INITIAL_UPPER;
    loop {
        let v = gap(hi);
        if v >= 0.0 {
            break;
        }
        if hi >= MAX_UPPER {
            return Err(SolveError::Unreachable {
                target,
                min_burden: at_zero + target,
                max_burden: v + target,
            });
        }
        hi *= 2.0;
    }
    Ok(outside(bisect_increasing(gap, 0.0, hi, RATE_TOLERANCE)))
}

/// Fixed-point solve where the outlay netted from gross revenue is a
/// function of the rate. [`solve_with_cashback`] uses the cashback total;
/// scenarios may add transfers.
pub fn solve_with_outlay(
    ev: &Evaluator<'_>,
    target: f64,
    outlay: impl Fn(Rate) -> f64,
) -> Result<SolveResult, SolveError> {
    check_target(target)?;
    let denominator = ev.denominator();
    let burden = |t: Rate, o: f64| (ev.gross_revenue(t) - o) / denominator;

    let mut rate = solve_given_cashback(ev, 0.0, target)?;
    let mut outlay_at_rate = outlay(rate);
    let mut trace = vec![TraceRow {
        iteration: 0,
        t_ref: rate.value(),
        cashback_total: 0.0,
        net_burden: burden(rate, outlay_at_rate),
    }];

    let mut last_change = f64::INFINITY;
    for iteration in 1..=MAX_OUTER_ITERATIONS {
        let held = outlay_at_rate;
        let next = solve_given_cashback(ev, held, target)?;
        outlay_at_rate = outlay(next);
        let net_burden = burden(next, outlay_at_rate);
        trace.push(TraceRow {
            iteration,
            t_ref: next.value(),
            cashback_total: held,
            net_burden,
        });
        last_change = (next.value() - rate.value()).abs();
        rate = next;
        if last_change < FIXED_POINT_TOLERANCE {
            let residual = (net_burden - target).abs();
            if residual > RESIDUAL_TOLERANCE {
                return Err(SolveError::NoConvergence {
                    iterations: iteration,
                    last_change,
                    residual,
                    trace,
                });
            }
            return Ok(SolveResult {
                t_ref: rate,
                t_ref_inside: rate.to_inside(),
                iterations: iteration,
                residual,
                cashback_total: outlay_at_rate,
                trace,
            });
        }
    }
    let residual = (trace.last().map_or(f64::NAN, |r| r.net_burden) - target).abs();
    Err(SolveError::NoConvergence {
        iterations: MAX_OUTER_ITERATIONS,
        last_change,
        residual,
        trace,
    })
}

/// Revenue-neutral reference rate with cashback feedback.
pub fn solve_with_cashback(ev: &Evaluator<'_>, target: f64) -> Result<SolveResult, SolveError> {
    solve_with_outlay(ev, target, |t| ev.cashback_total(t))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImpactKind {
    /// Cashback-free rate of the intact schedule.
    Baseline,
    Removal(String),
    /// Intact schedule, cashback included.
    WithCashback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRow {
    pub label: String,
    pub kind: ImpactKind,
    /// Outside reference rate.
    pub rate: Rate,
    /// Change against the baseline row, in percentage points of the
    /// outside rate.
    pub delta_pp: f64,
}

/// Marginal effect of each favoured treatment on the reference rate.
///
/// The first row is the cashback-free rate of the intact schedule; each
/// removal row re-solves (still without cashback) with the selected
/// categories moved to the reference rate; the last row is the intact
/// schedule solved with cashback.
pub fn marginal_rate_impact(
    ev: &Evaluator<'_>,
    removals: &[Selector],
    target: f64,
) -> Result<Vec<ImpactRow>, SolveError> {
    let schedule = ev.schedule();
    let base = solve_given_cashback(ev, 0.0, target)?;
    let pp = |r: Rate| (r.value() - base.value()) * 100.0;
    let mut rows = vec![ImpactRow {
        label: "Reference rate without cashback".into(),
        kind: ImpactKind::Baseline,
        rate: base,
        delta_pp: 0.0,
    }];
    for selector in removals {
        let counterfactual = schedule.with_removal(selector)?;
        let cev = Evaluator::new(ev.population(), &counterfactual)?.with_mode(ev.mode());
        let rate = solve_given_cashback(&cev, 0.0, target)?;
        rows.push(ImpactRow {
            label: format!("Without {}", schedule.selector_label(selector)),
            kind: ImpactKind::Removal(selector.to_string()),
            rate,
            delta_pp: pp(rate),
        });
    }
    let with_cashback = solve_with_cashback(ev, target)?.t_ref;
    rows.push(ImpactRow {
        label: "Reference rate with cashback".into(),
        kind: ImpactKind::WithCashback,
        rate: with_cashback,
        delta_pp: pp(with_cashback),
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdata::{generate_synthetic, Household, Population, Provenance};
    use crate::schedule::{CashbackParams, Schedule};

    fn oracle_schedule() -> Schedule {
        Schedule::from_json_str(include_str!("../fixtures/oracle6.json"), "oracle6").unwrap()
    }

    fn small_population(s: &Schedule) -> Population {
        let hs = vec![
            Household {
                id: 1,
                weight: 2.0,
                residents: 3,
                income_per_capita: 200.0,
                expenditures: vec![400.0, 500.0, 150.0, 600.0, 0.0, 30.0],
                nonmonetary_total: 50.0,
            },
            Household {
                id: 2,
                weight: 1.0,
                residents: 2,
                income_per_capita: 900.0,
                expenditures: vec![300.0, 1500.0, 200.0, 1200.0, 300.0, 80.0],
                nonmonetary_total: 100.0,
            },
            Household {
                id: 3,
                weight: 0.5,
                residents: 1,
                income_per_capita: 4000.0,
                expenditures: vec![200.0, 3000.0, 250.0, 0.0, 900.0, 0.0],
                nonmonetary_total: 0.0,
            },
        ];
        Population::new(s.category_ids().map(str::to_string).collect(), hs, Provenance::InMemory).unwrap()
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect_increasing(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn single_reference_category_quarter_rate() {
        let s = Schedule::uniform();
        let p = generate_synthetic(1, 200, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let r = solve_given_cashback(&ev, 0.0, 0.20).unwrap();
        assert!((r.value() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn zero_target_with_zero_fixed_rates() {
        let mut spec = oracle_schedule().spec().clone();
        for c in &mut spec.categories {
            if let crate::schedule::Treatment::SpecificRegime { .. } = c.treatment {
                c.treatment = crate::schedule::Treatment::ZeroRate;
            }
            if let crate::schedule::Treatment::Selective { .. } = c.treatment {
                c.treatment = crate::schedule::Treatment::ZeroRate;
            }
        }
        let s = Schedule::new(spec).unwrap();
        let p = small_population(&s);
        let ev = Evaluator::new(&p, &s).unwrap();
        assert_eq!(solve_given_cashback(&ev, 0.0, 0.0).unwrap().value(), 0.0);
    }

    #[test]
    fn unreachable_targets_report_range() {
        let s = oracle_schedule();
        let p = small_population(&s);
        let ev = Evaluator::new(&p, &s).unwrap();
        // specific-regime and excise taxes alone exceed a tiny target
        match solve_given_cashback(&ev, 0.0, 0.001) {
            Err(SolveError::Unreachable { min_burden, max_burden, .. }) => {
                assert!(min_burden > 0.001);
                assert!(max_burden > min_burden);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            solve_given_cashback(&ev, 0.0, 0.99),
            Err(SolveError::Unreachable { .. })
        ));
        assert!(matches!(solve_given_cashback(&ev, 0.0, 1.5), Err(SolveError::Target(_))));
    }

    #[test]
    fn given_cashback_matches_grid_search() {
        let s = oracle_schedule();
        let p = small_population(&s);
        let ev = Evaluator::new(&p, &s).unwrap();
        let r = solve_given_cashback(&ev, 0.0, 0.201).unwrap().value();
        // dense grid: first step whose burden reaches the target
        let step = 1e-6;
        let mut k = 0u64;
        let found = loop {
            let t = k as f64 * step;
            if ev.gross_revenue(outside(t)) / ev.denominator() >= 0.201 {
                break t;
            }
            k += 1;
            assert!(t < 5.0);
        };
        assert!((r - found).abs() <= 2e-6, "{r} vs {found}");
        let achieved = ev.gross_revenue(outside(r)) / ev.denominator();
        assert!((achieved - 0.201).abs() < 1e-9);
    }

    #[test]
    fn zero_refund_shares_reduce_to_cashback_free_solve() {
        let s = Schedule::plp68()
            .with_cashback(CashbackParams {
                utility_refund_share: 0.0,
                standard_refund_share: 0.0,
            })
            .unwrap();
        let p = generate_synthetic(9, 800, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let res = solve_with_cashback(&ev, 0.201).unwrap();
        let plain = solve_given_cashback(&ev, 0.0, 0.201).unwrap();
        assert_eq!(res.t_ref, plain);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.trace.len(), 2);
        assert_eq!(res.cashback_total, 0.0);
    }

    #[test]
    fn cashback_raises_the_rate_and_trace_is_recorded() {
        let s = Schedule::plp68();
        let p = generate_synthetic(11, 2000, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let res = solve_with_cashback(&ev, 0.201).unwrap();
        let plain = solve_given_cashback(&ev, 0.0, 0.201).unwrap();
        assert!(res.t_ref.value() > plain.value());
        assert!(res.residual <= RESIDUAL_TOLERANCE);
        assert!((ev.net_burden(res.t_ref) - 0.201).abs() <= 1e-7);
        let csv = res.trace_csv();
        assert!(csv.starts_with("iter,t_ref_outside,cashback_total,net_burden\n"));
        assert_eq!(csv.lines().count(), res.trace.len() + 1);
        assert_eq!(res.trace[0].cashback_total, 0.0);
    }

    #[test]
    fn non_convergence_carries_trace() {
        let s = Schedule::uniform();
        let p = generate_synthetic(1, 50, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        // an outlay that keeps jumping prevents the fixed point from settling
        let flip = std::cell::Cell::new(false);
        let err = solve_with_outlay(&ev, 0.2, |_| {
            flip.set(!flip.get());
            if flip.get() { ev.denominator() * 0.05 } else { 0.0 }
        })
        .unwrap_err();
        match err {
            SolveError::NoConvergence { iterations, trace, .. } => {
                assert_eq!(iterations, MAX_OUTER_ITERATIONS);
                assert_eq!(trace.len(), MAX_OUTER_ITERATIONS + 1);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn impact_rows_for_zero_expenditure_group() {
        let s = oracle_schedule();
        let mut p = small_population(&s);
        // nobody eats at restaurants
        let hs: Vec<Household> = p
            .households()
            .iter()
            .cloned()
            .map(|mut h| {
                h.expenditures[4] = 0.0;
                h
            })
            .collect();
        p = Population::new(p.categories().to_vec(), hs, Provenance::InMemory).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let rows = marginal_rate_impact(&ev, &[Selector::parse("esp").unwrap()], 0.201).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].delta_pp.abs() < 1e-9);
        assert_eq!(rows[1].kind, ImpactKind::Removal("esp".into()));
        assert!(rows[2].delta_pp > 0.0);
    }
}
