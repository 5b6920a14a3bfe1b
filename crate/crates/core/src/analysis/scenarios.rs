use std::fmt;
use std::str::FromStr;

use crate::engine::{universal_transfer_amount, Evaluator, HouseholdIncidence};
use crate::microdata::Population;
use crate::rates::Rate;
use crate::schedule::{Schedule, Selector};
use crate::solver::{solve_given_cashback, solve_with_cashback, solve_with_outlay, SolveResult};
use crate::sum::{sum, NeumaierSum};

use super::quintiles::{QuintileAssignment, QUINTILES};
use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// Pre-reform effective rates.
    Baseline,
    /// One reference rate on every in-denominator category, no excise, no
    /// cashback.
    UniformVat,
    /// The schedule as configured, with cashback.
    Plp68,
    /// The schedule with the food basket taxed at the reference rate and
    /// the extra revenue paid back as an equal per-person transfer.
    Plp68TransferSwap,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Baseline,
        ScenarioKind::UniformVat,
        ScenarioKind::Plp68,
        ScenarioKind::Plp68TransferSwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "baseline",
            ScenarioKind::UniformVat => "uniform_vat",
            ScenarioKind::Plp68 => "plp68",
            ScenarioKind::Plp68TransferSwap => "plp68_transfer_swap",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "Current system",
            ScenarioKind::UniformVat => "Uniform VAT",
            ScenarioKind::Plp68 => "PLP 68/2024",
            ScenarioKind::Plp68TransferSwap => "PLP 68 without food-basket exemption, with universal transfer",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| AnalysisError::UnknownScenario(s.to_string()))
    }
}

/// How the transfer-swap scenario balances the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapMode {
    /// Keep the PLP 68 reference rate and transfer the extra net revenue.
    #[default]
    HoldRate,
    /// Transfer the net revenue raised on the food basket and re-solve the
    /// reference rate (with cashback) for the baseline burden.
    Resolve,
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    /// Categories whose exemption the transfer swap removes.
    pub food_basket: Selector,
    pub swap_mode: SwapMode,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            food_basket: Selector::parse("cesta_basica").expect("static selector"),
            swap_mode: SwapMode::HoldRate,
        }
    }
}

/// Weighted means of one quintile under one scenario (currency/month per
/// household).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuintileRow {
    pub mean_tax: f64,
    pub mean_monetary_expenditure: f64,
    /// Monetary plus non-monetary.
    pub mean_total_expenditure: f64,
    /// `mean_tax` minus the baseline `mean_tax`.
    pub delta_tax: f64,
    /// `delta_tax / mean_monetary_expenditure`.
    pub delta_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub kind: ScenarioKind,
    /// Outside reference rate, for reform scenarios.
    pub reference_rate: Option<Rate>,
    pub transfer_per_person: Option<f64>,
    /// Net tax of each household, in population order.
    pub net_tax: Vec<f64>,
    /// Σ weight × net tax.
    pub total_net: f64,
    /// Σ weight × (net − baseline net) divided by baseline revenue.
    pub neutrality_gap: f64,
    pub quintiles: [QuintileRow; QUINTILES],
}

/// Runs distributional scenarios against a common baseline.
pub struct ScenarioRunner<'a> {
    ev: &'a Evaluator<'a>,
    quintiles: &'a QuintileAssignment,
    options: ScenarioOptions,
    baseline_net: Vec<f64>,
    baseline_revenue: f64,
    plp68: Option<SolveResult>,
}

impl<'a> ScenarioRunner<'a> {
    pub fn new(
        ev: &'a Evaluator<'a>,
        quintiles: &'a QuintileAssignment,
        options: ScenarioOptions,
    ) -> Result<Self, AnalysisError> {
        let baseline = ev.baseline_incidences();
        let baseline_revenue = ev.aggregate(&baseline)?.total_net;
        if baseline_revenue <= 0.0 {
            return Err(AnalysisError::NoBaselineRevenue);
        }
        Ok(ScenarioRunner {
            ev,
            quintiles,
            options,
            baseline_net: baseline.iter().map(HouseholdIncidence::net_tax).collect(),
            baseline_revenue,
            plp68: None,
        })
    }

    /// Net burden of the pre-reform system; every reform scenario is solved
    /// to reproduce it.
    pub fn baseline_burden(&self) -> f64 {
        self.baseline_revenue / self.ev.denominator()
    }

    pub fn baseline_revenue(&self) -> f64 {
        self.baseline_revenue
    }

    pub fn run_all(&mut self, kinds: &[ScenarioKind]) -> Result<Vec<ScenarioOutcome>, AnalysisError> {
        if kinds.is_empty() {
            return Err(AnalysisError::NoScenarios);
        }
        kinds.iter().map(|&k| self.run(k)).collect()
    }

    pub fn run(&mut self, kind: ScenarioKind) -> Result<ScenarioOutcome, AnalysisError> {
        let target = self.baseline_burden();
        let pop = self.ev.population();
        match kind {
            ScenarioKind::Baseline => Ok(self.outcome(kind, None, None, self.baseline_net.clone())),
            ScenarioKind::UniformVat => {
                let uniform = self.ev.schedule().uniform_variant();
                let uev = Evaluator::new(pop, &uniform)?.with_mode(self.ev.mode());
                let rate = solve_given_cashback(&uev, 0.0, target)?;
                let net = uev.incidences(rate).iter().map(HouseholdIncidence::net_tax).collect();
                Ok(self.outcome(kind, Some(rate), None, net))
            }
            ScenarioKind::Plp68 => {
                let rate = self.plp68_rate(target)?;
                let net = self.ev.incidences(rate).iter().map(HouseholdIncidence::net_tax).collect();
                Ok(self.outcome(kind, Some(rate), None, net))
            }
            ScenarioKind::Plp68TransferSwap => self.transfer_swap(target),
        }
    }

    fn plp68_rate(&mut self, target: f64) -> Result<Rate, AnalysisError> {
        if self.plp68.is_none() {
            self.plp68 = Some(solve_with_cashback(self.ev, target)?);
        }
        Ok(self.plp68.as_ref().expect("just solved").t_ref)
    }

    fn transfer_swap(&mut self, target: f64) -> Result<ScenarioOutcome, AnalysisError> {
        let schedule = self.ev.schedule();
        let pop = self.ev.population();
        let food = schedule.resolve(&self.options.food_basket)?;
        let swapped = schedule.with_removal(&self.options.food_basket)?;
        let sev = Evaluator::new(pop, &swapped)?.with_mode(self.ev.mode());

        let (rate, per_person) = match self.options.swap_mode {
            SwapMode::HoldRate => {
                let rate = self.plp68_rate(target)?;
                let before = self.ev.aggregate_at(rate).total_net;
                let after = sev.aggregate_at(rate).total_net;
                let extra = after - before;
                if extra < 0.0 {
                    return Err(AnalysisError::NegativeExtraRevenue(extra));
                }
                (rate, universal_transfer_amount(extra, pop)?)
            }
            SwapMode::Resolve => {
                let budget = |t: Rate| food_net_revenue(&sev, &swapped, &food, t);
                let solved = solve_with_outlay(&sev, target, |t| sev.cashback_total(t) + budget(t))?;
                let per_person = universal_transfer_amount(budget(solved.t_ref), pop)?;
                (solved.t_ref, per_person)
            }
        };

        let net = sev
            .incidences(rate)
            .into_iter()
            .zip(pop.households())
            .map(|(mut inc, h)| {
                inc.transfer = per_person * f64::from(h.residents);
                inc.net_tax()
            })
            .collect();
        Ok(self.outcome(ScenarioKind::Plp68TransferSwap, Some(rate), Some(per_person), net))
    }

    fn outcome(
        &self,
        kind: ScenarioKind,
        reference_rate: Option<Rate>,
        transfer_per_person: Option<f64>,
        net_tax: Vec<f64>,
    ) -> ScenarioOutcome {
        let pop = self.ev.population();
        let total_net = sum(pop.households().iter().zip(&net_tax).map(|(h, n)| h.weight * n));
        let gap = sum(
            pop.households()
                .iter()
                .zip(net_tax.iter().zip(&self.baseline_net))
                .map(|(h, (n, b))| h.weight * (n - b)),
        );
        ScenarioOutcome {
            kind,
            reference_rate,
            transfer_per_person,
            quintiles: quintile_rows(pop, self.quintiles, &net_tax, &self.baseline_net),
            net_tax,
            total_net,
            neutrality_gap: gap / self.baseline_revenue,
        }
    }
}

/// Σ weight × (tax − cashback) over the `food` categories at `rate`.
fn food_net_revenue(ev: &Evaluator<'_>, schedule: &Schedule, food: &[usize], rate: Rate) -> f64 {
    let threshold = schedule.eligibility_threshold();
    let shares: Vec<f64> = food
        .iter()
        .map(|&k| schedule.refund_share(schedule.categories()[k].cashback_class))
        .collect();
    let incidences = ev.incidences(rate);
    sum(ev.population().households().iter().zip(&incidences).map(|(h, inc)| {
        let eligible = h.income_per_capita <= threshold;
        h.weight
            * sum(food.iter().zip(&shares).map(|(&k, s)| {
                let tax = inc.per_category_tax[k];
                if eligible {
                    tax * (1.0 - s)
                } else {
                    tax
                }
            }))
    }))
}

fn quintile_rows(
    pop: &Population,
    quintiles: &QuintileAssignment,
    net: &[f64],
    baseline: &[f64],
) -> [QuintileRow; QUINTILES] {
    let mut weight = [NeumaierSum::new(); QUINTILES];
    let mut tax = [NeumaierSum::new(); QUINTILES];
    let mut base = [NeumaierSum::new(); QUINTILES];
    let mut monetary = [NeumaierSum::new(); QUINTILES];
    let mut total = [NeumaierSum::new(); QUINTILES];
    for (i, h) in pop.households().iter().enumerate() {
        let q = usize::from(quintiles.quintile_of(i)) - 1;
        let m = h.monetary_total();
        weight[q].add(h.weight);
        tax[q].add(h.weight * net[i]);
        base[q].add(h.weight * baseline[i]);
        monetary[q].add(h.weight * m);
        total[q].add(h.weight * (m + h.nonmonetary_total));
    }
    std::array::from_fn(|q| {
        let w = weight[q].value();
        let mean = |s: &NeumaierSum| if w > 0.0 { s.value() / w } else { f64::NAN };
        let mean_tax = mean(&tax[q]);
        let mean_monetary = mean(&monetary[q]);
        let delta_tax = mean_tax - mean(&base[q]);
        QuintileRow {
            mean_tax,
            mean_monetary_expenditure: mean_monetary,
            mean_total_expenditure: mean(&total[q]),
            delta_tax,
            delta_share: delta_tax / mean_monetary,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::assign_quintiles;
    use crate::microdata::{generate_synthetic, Household, Provenance};
    use crate::schedule::Schedule;

    #[test]
    fn parse_names() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("nope".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn every_scenario_is_neutral() {
        let s = Schedule::plp68();
        let p = generate_synthetic(7, 2000, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let q = assign_quintiles(&p);
        let mut runner = ScenarioRunner::new(&ev, &q, ScenarioOptions::default()).unwrap();
        let outcomes = runner.run_all(&ScenarioKind::ALL).unwrap();
        for o in &outcomes {
            assert!(o.neutrality_gap.abs() < 1e-6, "{}: {}", o.kind, o.neutrality_gap);
        }
        let swap = &outcomes[3];
        assert!(swap.transfer_per_person.unwrap() > 0.0);
        assert_eq!(swap.reference_rate, outcomes[2].reference_rate);
        assert!(swap.quintiles[0].delta_tax < outcomes[2].quintiles[0].delta_tax);
    }

    #[test]
    fn resolve_mode_is_neutral_and_lowers_nothing_unexpected() {
        let s = Schedule::plp68();
        let p = generate_synthetic(8, 1500, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let q = assign_quintiles(&p);
        let options = ScenarioOptions {
            swap_mode: SwapMode::Resolve,
            ..ScenarioOptions::default()
        };
        let mut runner = ScenarioRunner::new(&ev, &q, options).unwrap();
        let o = runner.run(ScenarioKind::Plp68TransferSwap).unwrap();
        assert!(o.neutrality_gap.abs() < 1e-6, "{}", o.neutrality_gap);
        assert!(o.transfer_per_person.unwrap() > 0.0);
    }

    #[test]
    fn uniform_vat_takes_the_same_share_of_every_budget() {
        let s = Schedule::uniform();
        let mk = |id: u64, spend: f64| Household {
            id,
            weight: 1.0 + id as f64,
            residents: 1,
            income_per_capita: 0.0,
            expenditures: vec![spend],
            nonmonetary_total: 0.0,
        };
        let p = Population::new(
            vec!["consumo".into()],
            (1..=10).map(|i| mk(i, 100.0 * i as f64)).collect(),
            Provenance::InMemory,
        )
        .unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let q = assign_quintiles(&p);
        let mut runner = ScenarioRunner::new(&ev, &q, ScenarioOptions::default()).unwrap();
        let o = runner.run(ScenarioKind::UniformVat).unwrap();
        let ratios: Vec<f64> = p
            .households()
            .iter()
            .zip(&o.net_tax)
            .zip(&runner.baseline_net)
            .map(|((h, n), b)| (n - b) / h.monetary_total())
            .collect();
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-12);
        }
        // baseline burden 0.201 inside gives outside b / (1 - b)
        assert!((o.reference_rate.unwrap().value() - 0.201 / 0.799).abs() < 1e-9);
    }

    #[test]
    fn empty_scenario_list_errors() {
        let s = Schedule::uniform();
        let p = generate_synthetic(1, 20, &s).unwrap();
        let ev = Evaluator::new(&p, &s).unwrap();
        let q = assign_quintiles(&p);
        let mut runner = ScenarioRunner::new(&ev, &q, ScenarioOptions::default()).unwrap();
        assert!(matches!(runner.run_all(&[]), Err(AnalysisError::NoScenarios)));
    }
}
