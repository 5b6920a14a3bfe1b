//! Per-household tax, cashback and transfer under a schedule, and weighted
//! aggregation.
//!
//! Expenditures are tax-inclusive and held fixed across scenarios, so a
//! category's tax is its taxable base times its inside rate. The rent regime
//! subtracts its monthly reducer from the rent base first; unused reducer is
//! not carried to other categories.
//!
//! Aggregates are weight-expanded sums taken in ascending household id with
//! compensated summation. Per-household work may run in parallel (see
//! [`ExecMode`]); the reduction never does, which keeps totals bit-identical
//! across thread counts.

use thiserror::Error;

use crate::microdata::{Household, Population};
use crate::par::{self, ExecMode};
use crate::rates::Rate;
use crate::schedule::{Schedule, Treatment};
use crate::sum::{sum, NeumaierSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("population categories {found:?} do not match schedule categories {expected:?}")]
    CategoryMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("consumption denominator is zero: no in-denominator expenditure in the population")]
    ZeroDenominator,
    #[error("{incidences} incidences for {households} households")]
    IncidenceCount { incidences: usize, households: usize },
    #[error("incidence for household {found} where {expected} was expected")]
    IncidenceOrder { expected: u64, found: u64 },
    #[error("population has no persons to receive a transfer")]
    NoPersons,
    #[error("transfer budget {0} must be finite and non-negative")]
    TransferBudget(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdIncidence {
    pub household_id: u64,
    pub gross_tax: f64,
    pub cashback: f64,
    pub transfer: f64,
    /// Tax by category, aligned with the schedule's category order.
    pub per_category_tax: Vec<f64>,
}

impl HouseholdIncidence {
    pub fn net_tax(&self) -> f64 {
        self.gross_tax - self.cashback - self.transfer
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateIncidence {
    pub total_gross: f64,
    pub total_cashback: f64,
    pub total_transfer: f64,
    pub total_net: f64,
    /// Weighted monetary consumption over in-denominator categories.
    pub denominator_expenditure: f64,
}

impl AggregateIncidence {
    pub fn net_burden(&self) -> f64 {
        self.total_net / self.denominator_expenditure
    }
}

/// Inside rates and rent reducers of every category at one reference rate.
#[derive(Debug, Clone)]
pub struct TaxRates {
    inside: Vec<f64>,
    reducer: Vec<f64>,
}

impl TaxRates {
    pub fn at(schedule: &Schedule, reference: Rate) -> Self {
        TaxRates {
            inside: schedule.inside_rates(reference),
            reducer: reducers(schedule),
        }
    }

    /// Pre-reform effective rates; no reducer applies.
    pub fn baseline(schedule: &Schedule) -> Self {
        TaxRates {
            inside: schedule
                .categories()
                .iter()
                .map(|c| c.baseline_effective.to_inside().value())
                .collect(),
            reducer: vec![0.0; schedule.categories().len()],
        }
    }

    pub fn inside(&self) -> &[f64] {
        &self.inside
    }

    #[inline]
    fn category_tax(&self, k: usize, expenditure: f64) -> f64 {
        (expenditure - self.reducer[k]).max(0.0) * self.inside[k]
    }

    fn household(&self, h: &Household) -> HouseholdIncidence {
        let per_category_tax: Vec<f64> = h
            .expenditures
            .iter()
            .enumerate()
            .map(|(k, &e)| self.category_tax(k, e))
            .collect();
        HouseholdIncidence {
            household_id: h.id,
            gross_tax: sum(per_category_tax.iter().copied()),
            cashback: 0.0,
            transfer: 0.0,
            per_category_tax,
        }
    }

    fn gross(&self, h: &Household) -> f64 {
        sum(h.expenditures.iter().enumerate().map(|(k, &e)| self.category_tax(k, e)))
    }
}

fn reducers(schedule: &Schedule) -> Vec<f64> {
    schedule
        .categories()
        .iter()
        .map(|c| match c.treatment {
            Treatment::RentRegime { reducer, .. } => reducer,
            _ => 0.0,
        })
        .collect()
}

/// Gross tax of one household at reference rate `reference`.
pub fn household_tax(h: &Household, schedule: &Schedule, reference: Rate) -> HouseholdIncidence {
    TaxRates::at(schedule, reference).household(h)
}

/// Tax under the pre-reform effective rates; no cashback or transfer.
pub fn baseline_tax(h: &Household, schedule: &Schedule) -> HouseholdIncidence {
    TaxRates::baseline(schedule).household(h)
}

struct RefundShares(Vec<f64>);

impl RefundShares {
    fn of(schedule: &Schedule) -> Self {
        RefundShares(
            schedule
                .categories()
                .iter()
                .map(|c| schedule.refund_share(c.cashback_class))
                .collect(),
        )
    }

    fn cashback(&self, h: &Household, threshold: f64, per_category_tax: impl Iterator<Item = f64>) -> f64 {
        if h.income_per_capita > threshold {
            return 0.0;
        }
        sum(self.0.iter().zip(per_category_tax).map(|(s, t)| s * t))
    }
}

/// Cashback owed to `h` given its computed taxes. Households above the
/// per-capita income threshold receive nothing.
pub fn household_cashback(h: &Household, inc: &HouseholdIncidence, schedule: &Schedule) -> f64 {
    RefundShares::of(schedule).cashback(
        h,
        schedule.eligibility_threshold(),
        inc.per_category_tax.iter().copied(),
    )
}

/// Σ weight × in-denominator monetary expenditure.
pub fn denominator_expenditure(pop: &Population, schedule: &Schedule) -> f64 {
    let flags: Vec<bool> = schedule.categories().iter().map(|c| c.in_denominator).collect();
    sum(pop.households().iter().map(|h| {
        h.weight
            * sum(h
                .expenditures
                .iter()
                .zip(&flags)
                .filter(|(_, f)| **f)
                .map(|(e, _)| *e))
    }))
}

/// Weight-expanded totals of per-household incidences, which must be given
/// one per household in population order.
pub fn aggregate(
    pop: &Population,
    incidences: &[HouseholdIncidence],
    schedule: &Schedule,
) -> Result<AggregateIncidence, EngineError> {
    if incidences.len() != pop.len() {
        return Err(EngineError::IncidenceCount {
            incidences: incidences.len(),
            households: pop.len(),
        });
    }
    let mut gross = NeumaierSum::new();
    let mut cashback = NeumaierSum::new();
    let mut transfer = NeumaierSum::new();
    let mut net = NeumaierSum::new();
    for (h, inc) in pop.households().iter().zip(incidences) {
        if h.id != inc.household_id {
            return Err(EngineError::IncidenceOrder {
                expected: h.id,
                found: inc.household_id,
            });
        }
        gross.add(h.weight * inc.gross_tax);
        cashback.add(h.weight * inc.cashback);
        transfer.add(h.weight * inc.transfer);
        net.add(h.weight * inc.net_tax());
    }
    let denominator = denominator_expenditure(pop, schedule);
    if denominator <= 0.0 {
        return Err(EngineError::ZeroDenominator);
    }
    Ok(AggregateIncidence {
        total_gross: gross.value(),
        total_cashback: cashback.value(),
        total_transfer: transfer.value(),
        total_net: net.value(),
        denominator_expenditure: denominator,
    })
}

/// Per-person amount of a lump-sum transfer that distributes
/// `extra_revenue` over every resident in the weighted population.
pub fn universal_transfer_amount(extra_revenue: f64, pop: &Population) -> Result<f64, EngineError> {
    if !(extra_revenue.is_finite() && extra_revenue >= 0.0) {
        return Err(EngineError::TransferBudget(extra_revenue));
    }
    let persons = pop.weighted_persons();
    if persons <= 0.0 {
        return Err(EngineError::NoPersons);
    }
    Ok(extra_revenue / persons)
}

/// Checks that the population's columns are the schedule's categories, in
/// order.
pub fn check_alignment(pop: &Population, schedule: &Schedule) -> Result<(), EngineError> {
    let aligned = pop.categories().len() == schedule.categories().len()
        && pop
            .categories()
            .iter()
            .zip(schedule.category_ids())
            .all(|(a, b)| a == b);
    if aligned {
        Ok(())
    } else {
        Err(EngineError::CategoryMismatch {
            expected: schedule.category_ids().map(str::to_string).collect(),
            found: pop.categories().to_vec(),
        })
    }
}

/// Repeated evaluation of one population under one schedule, as needed by
/// the rate solvers.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pop: &'a Population,
    schedule: &'a Schedule,
    refunds: Vec<f64>,
    denominator: f64,
    mode: ExecMode,
}

impl<'a> Evaluator<'a> {
    pub fn new(pop: &'a Population, schedule: &'a Schedule) -> Result<Self, EngineError> {
        check_alignment(pop, schedule)?;
        let denominator = denominator_expenditure(pop, schedule);
        if denominator <= 0.0 {
            return Err(EngineError::ZeroDenominator);
        }
        Ok(Evaluator {
            pop,
            schedule,
            refunds: RefundShares::of(schedule).0,
            denominator,
            mode: ExecMode::default(),
        })
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn population(&self) -> &'a Population {
        self.pop
    }

    pub fn schedule(&self) -> &'a Schedule {
        self.schedule
    }

    pub fn denominator(&self) -> f64 {
        self.denominator
    }

    fn weighted_total(&self, f: impl Fn(&Household) -> f64 + Sync + Send) -> f64 {
        let parts = par::map(self.mode, self.pop.households(), |h| h.weight * f(h));
        sum(parts)
    }

    /// Σ weight × gross tax at `reference`.
    pub fn gross_revenue(&self, reference: Rate) -> f64 {
        let rates = TaxRates::at(self.schedule, reference);
        self.weighted_total(|h| rates.gross(h))
    }

    /// Σ weight × cashback at `reference`.
    pub fn cashback_total(&self, reference: Rate) -> f64 {
        let rates = TaxRates::at(self.schedule, reference);
        let threshold = self.schedule.eligibility_threshold();
        let shares = RefundShares(self.refunds.clone());
        self.weighted_total(|h| {
            shares.cashback(
                h,
                threshold,
                h.expenditures.iter().enumerate().map(|(k, &e)| rates.category_tax(k, e)),
            )
        })
    }

    /// Gross tax and cashback of every household, in population order.
    pub fn incidences(&self, reference: Rate) -> Vec<HouseholdIncidence> {
        let rates = TaxRates::at(self.schedule, reference);
        let threshold = self.schedule.eligibility_threshold();
        let shares = RefundShares(self.refunds.clone());
        par::map(self.mode, self.pop.households(), |h| {
            let mut inc = rates.household(h);
            inc.cashback = shares.cashback(h, threshold, inc.per_category_tax.iter().copied());
            inc
        })
    }

    /// Pre-reform taxes of every household, in population order.
    pub fn baseline_incidences(&self) -> Vec<HouseholdIncidence> {
        let rates = TaxRates::baseline(self.schedule);
        par::map(self.mode, self.pop.households(), |h| rates.household(h))
    }

    pub fn aggregate(&self, incidences: &[HouseholdIncidence]) -> Result<AggregateIncidence, EngineError> {
        aggregate(self.pop, incidences, self.schedule)
    }

    pub fn aggregate_at(&self, reference: Rate) -> AggregateIncidence {
        self.aggregate(&self.incidences(reference))
            .expect("incidences come from the same population")
    }

    /// (gross − cashback) / denominator at `reference`.
    pub fn net_burden(&self, reference: Rate) -> f64 {
        (self.gross_revenue(reference) - self.cashback_total(reference)) / self.denominator
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdata::Provenance;
    use crate::schedule::Selector;

    fn out(v: f64) -> Rate {
        Rate::outside(v).unwrap()
    }

    fn oracle_schedule() -> Schedule {
        Schedule::from_json_str(include_str!("../fixtures/oracle6.json"), "oracle6").unwrap()
    }

    fn hh(id: u64, weight: f64, residents: u32, income: f64, e: [f64; 6]) -> Household {
        Household {
            id,
            weight,
            residents,
            income_per_capita: income,
            expenditures: e.to_vec(),
            nonmonetary_total: 0.0,
        }
    }

    fn pop(hs: Vec<Household>) -> Population {
        let s = oracle_schedule();
        Population::new(s.category_ids().map(str::to_string).collect(), hs, Provenance::InMemory).unwrap()
    }

    #[test]
    fn rent_reducer_example() {
        let s = oracle_schedule();
        let h = hh(1, 1.0, 1, 1000.0, [0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]);
        let inc = household_tax(&h, &s, out(0.379));
        // taxable 600 at to_inside(0.4 * 0.379)
        let expected = 600.0 * (0.1516 / 1.1516);
        assert!((inc.per_category_tax[3] - expected).abs() < 1e-9);
        assert!((inc.gross_tax - 78.98).abs() < 0.01);

        let h = hh(2, 1.0, 1, 1000.0, [0.0, 0.0, 0.0, 300.0, 0.0, 0.0]);
        assert_eq!(household_tax(&h, &s, out(0.379)).gross_tax, 0.0);
    }

    #[test]
    fn uniform_quarter_rate_is_a_fifth_of_spending() {
        let s = Schedule::uniform();
        let h = Household {
            id: 1,
            weight: 1.0,
            residents: 1,
            income_per_capita: 0.0,
            expenditures: vec![100.0],
            nonmonetary_total: 0.0,
        };
        assert!((household_tax(&h, &s, out(0.25)).gross_tax - 20.0).abs() < 1e-12);
    }

    #[test]
    fn cashback_classes() {
        let s = oracle_schedule();
        // utility tax of exactly 100 for an eligible household
        let mut inc = HouseholdIncidence {
            household_id: 1,
            gross_tax: 100.0,
            cashback: 0.0,
            transfer: 0.0,
            per_category_tax: vec![0.0, 0.0, 100.0, 0.0, 0.0, 0.0],
        };
        let poor = hh(1, 1.0, 1, 100.0, [0.0; 6]);
        assert!((household_cashback(&poor, &inc, &s) - 46.6).abs() < 1e-12);
        inc.per_category_tax = vec![0.0, 0.0, 0.0, 0.0, 0.0, 100.0];
        assert_eq!(household_cashback(&poor, &inc, &s), 0.0);
        inc.per_category_tax = vec![0.0, 100.0, 100.0, 0.0, 0.0, 0.0];
        let rich = hh(1, 1.0, 1, 477.01, [0.0; 6]);
        assert_eq!(household_cashback(&rich, &inc, &s), 0.0);
        let edge = hh(1, 1.0, 1, 477.0, [0.0; 6]);
        assert!((household_cashback(&edge, &inc, &s) - 66.6).abs() < 1e-12);
    }

    #[test]
    fn baseline_examples() {
        let s = oracle_schedule();
        // energia carries an outside baseline of 0.51
        let h = hh(1, 1.0, 1, 0.0, [0.0, 0.0, 100.0, 0.0, 0.0, 0.0]);
        let b = baseline_tax(&h, &s);
        assert!((b.gross_tax - 100.0 * 0.51 / 1.51).abs() < 1e-12);
        assert!((b.gross_tax - 33.77).abs() < 0.01);
        assert_eq!(b.cashback, 0.0);
        assert_eq!(b.transfer, 0.0);

        let h = hh(1, 1.0, 1, 0.0, [50.0, 100.0, 0.0, 0.0, 0.0, 0.0]);
        let b = baseline_tax(&h, &s);
        assert!((b.gross_tax - (5.0 + 20.0)).abs() < 1e-12);
        // rent below the reducer still pays baseline tax
        let h = hh(1, 1.0, 1, 0.0, [0.0, 0.0, 0.0, 100.0, 0.0, 0.0]);
        assert!((baseline_tax(&h, &s).gross_tax - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_baseline_rates_give_zero_tax() {
        let mut spec = oracle_schedule().spec().clone();
        for c in &mut spec.categories {
            c.baseline_effective = Rate::ZERO_INSIDE;
        }
        let s = Schedule::new(spec).unwrap();
        let h = hh(1, 1.0, 1, 0.0, [10.0, 20.0, 30.0, 500.0, 50.0, 60.0]);
        assert_eq!(baseline_tax(&h, &s).gross_tax, 0.0);
    }

    #[test]
    fn single_household_aggregate() {
        let s = Schedule::uniform();
        let p = Population::new(
            vec!["consumo".into()],
            vec![Household {
                id: 7,
                weight: 2.0,
                residents: 1,
                income_per_capita: 0.0,
                expenditures: vec![500.0],
                nonmonetary_total: 0.0,
            }],
            Provenance::InMemory,
        )
        .unwrap();
        let inc = HouseholdIncidence {
            household_id: 7,
            gross_tax: 50.0,
            cashback: 0.0,
            transfer: 0.0,
            per_category_tax: vec![50.0],
        };
        let a = aggregate(&p, &[inc], &s).unwrap();
        assert_eq!(a.total_net, 100.0);
        assert_eq!(a.denominator_expenditure, 1000.0);
        assert!((a.net_burden() - 0.10).abs() < 1e-15);
        assert!(matches!(aggregate(&p, &[], &s), Err(EngineError::IncidenceCount { .. })));
    }

    #[test]
    fn transfer_amounts() {
        let p = pop(vec![
            hh(1, 1.0, 2, 0.0, [1.0; 6]),
            hh(2, 3.0, 4, 0.0, [1.0; 6]),
        ]);
        let per_person = universal_transfer_amount(140.0, &p).unwrap();
        assert!((per_person - 10.0).abs() < 1e-12);
        assert_eq!(per_person * 2.0, 20.0);
        assert_eq!(per_person * 4.0, 40.0);
        assert_eq!(universal_transfer_amount(0.0, &p).unwrap(), 0.0);
        assert!(universal_transfer_amount(-1.0, &p).is_err());
        let p = pop(vec![hh(1, 100.0, 1, 0.0, [1.0; 6])]);
        assert!((universal_transfer_amount(1000.0, &p).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_population_is_rejected() {
        let s = Schedule::plp68();
        let p = pop(vec![hh(1, 1.0, 1, 0.0, [1.0; 6])]);
        assert!(matches!(Evaluator::new(&p, &s), Err(EngineError::CategoryMismatch { .. })));
        let zero = pop(vec![hh(1, 1.0, 1, 0.0, [0.0; 6])]);
        assert!(matches!(
            Evaluator::new(&zero, &oracle_schedule()),
            Err(EngineError::ZeroDenominator)
        ));
    }

    #[test]
    fn uniform_schedule_burden_is_inside_rate() {
        let s = Schedule::plp68().uniform_variant();
        let p = crate::microdata::generate_synthetic(3, 500, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        for t in [0.1, 0.25, 0.379] {
            assert!((ev.net_burden(out(t)) - t / (1.0 + t)).abs() < 1e-12);
        }
    }

    #[test]
    fn removal_does_not_change_denominator() {
        let s = Schedule::plp68();
        let p = crate::microdata::generate_synthetic(5, 300, &s).unwrap();
        let r = s.with_removal(&Selector::parse("imposto_seletivo").unwrap()).unwrap();
        assert_eq!(
            denominator_expenditure(&p, &s),
            denominator_expenditure(&p, &r)
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn household() -> impl Strategy<Value = Household> {
            (
                0.1f64..100.0,
                1u32..8,
                0.0f64..2000.0,
                proptest::array::uniform6(0.0f64..5000.0),
            )
                .prop_map(|(w, r, inc, e)| hh(0, w, r, inc, e))
        }

        fn population() -> impl Strategy<Value = Population> {
            proptest::collection::vec(household(), 1..12).prop_map(|hs| {
                pop(hs
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut h)| {
                        h.id = i as u64 + 1;
                        h.expenditures[1] += 1.0;
                        h
                    })
                    .collect())
            })
        }

        proptest! {
            #[test]
            fn gross_is_homogeneous_without_rent(h in household(), t in 0.0f64..2.0) {
                let s = oracle_schedule();
                let mut h = h;
                h.expenditures[3] = 0.0;
                let mut double = h.clone();
                double.expenditures.iter_mut().for_each(|e| *e *= 2.0);
                let a = household_tax(&h, &s, out(t)).gross_tax;
                let b = household_tax(&double, &s, out(t)).gross_tax;
                prop_assert!((b - 2.0 * a).abs() <= 1e-9 * a.max(1.0));
            }

            #[test]
            fn gross_is_monotone_in_reference(h in household(), a in 0.0f64..2.0, b in 0.0f64..2.0) {
                let s = oracle_schedule();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let glo = household_tax(&h, &s, out(lo)).gross_tax;
                let ghi = household_tax(&h, &s, out(hi)).gross_tax;
                prop_assert!(glo <= ghi + 1e-9);
            }

            #[test]
            fn gross_equals_sum_of_parts_and_cashback_bounded(h in household(), t in 0.0f64..2.0, us in 0.0f64..=1.0, ss in 0.0f64..=1.0) {
                let s = oracle_schedule()
                    .with_cashback(crate::schedule::CashbackParams { utility_refund_share: us, standard_refund_share: ss })
                    .unwrap();
                let inc = household_tax(&h, &s, out(t));
                let parts: f64 = inc.per_category_tax.iter().sum();
                prop_assert!((inc.gross_tax - parts).abs() <= 1e-9 * parts.max(1.0));
                let cb = household_cashback(&h, &inc, &s);
                prop_assert!(cb >= 0.0);
                prop_assert!(cb <= inc.gross_tax + 1e-9);
            }

            #[test]
            fn half_weight_split_leaves_aggregates(p in population(), t in 0.0f64..1.0) {
                let s = oracle_schedule();
                let split: Vec<Household> = p
                    .households()
                    .iter()
                    .flat_map(|h| {
                        let mut a = h.clone();
                        a.weight /= 2.0;
                        a.id = h.id * 2;
                        let mut b = a.clone();
                        b.id = h.id * 2 + 1;
                        [a, b]
                    })
                    .collect();
                let q = Population::new(p.categories().to_vec(), split, Provenance::InMemory).unwrap();
                let x = Evaluator::new(&p, &s).unwrap().aggregate_at(out(t));
                let y = Evaluator::new(&q, &s).unwrap().aggregate_at(out(t));
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
                prop_assert!(close(x.total_gross, y.total_gross));
                prop_assert!(close(x.total_cashback, y.total_cashback));
                prop_assert!(close(x.total_net, y.total_net));
                prop_assert!(close(x.denominator_expenditure, y.denominator_expenditure));
            }

            #[test]
            fn permutation_leaves_aggregates(p in population(), t in 0.0f64..1.0, seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let s = oracle_schedule();
                let mut hs = p.households().to_vec();
                hs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let q = Population::new(p.categories().to_vec(), hs, Provenance::InMemory).unwrap();
                let x = Evaluator::new(&p, &s).unwrap().aggregate_at(out(t));
                let y = Evaluator::new(&q, &s).unwrap().aggregate_at(out(t));
                prop_assert!((x.total_net - y.total_net).abs() <= 1e-12 * x.total_net.abs().max(1.0));
            }

            #[test]
            fn fast_paths_match_incidences(p in population(), t in 0.0f64..1.0) {
                let s = oracle_schedule();
                let ev = Evaluator::new(&p, &s).unwrap();
                let a = ev.aggregate_at(out(t));
                prop_assert!((a.total_gross - ev.gross_revenue(out(t))).abs() <= 1e-9 * a.total_gross.max(1.0));
                prop_assert!((a.total_cashback - ev.cashback_total(out(t))).abs() <= 1e-9 * a.total_gross.max(1.0));
            }
        }
    }
}
