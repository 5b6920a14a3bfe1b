use crate::microdata::Population;
use crate::schedule::{Group, Schedule};
use crate::sum::NeumaierSum;

use super::quintiles::{QuintileAssignment, QUINTILES};

/// Mean budget share (%) of each treatment group, by quintile and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareTable {
    pub groups: Vec<Group>,
    /// `cells[g][q]` for group `g` and quintile `q + 1`.
    pub cells: Vec<[f64; QUINTILES]>,
    /// Population-wide weighted mean share of each group.
    pub total: Vec<f64>,
}

impl ShareTable {
    /// Sum of each quintile column followed by the total column.
    pub fn column_sums(&self) -> [f64; QUINTILES + 1] {
        let mut out = [0.0; QUINTILES + 1];
        for (row, total) in self.cells.iter().zip(&self.total) {
            for q in 0..QUINTILES {
                out[q] += row[q];
            }
            out[QUINTILES] += total;
        }
        out
    }
}

/// Weighted mean over households of group expenditure / total expenditure
/// of grouped categories. Households with no grouped expenditure carry no
/// budget and are skipped.
pub fn budget_share_table(pop: &Population, schedule: &Schedule, quintiles: &QuintileAssignment) -> ShareTable {
    let groups = schedule.groups().to_vec();
    let member: Vec<Option<usize>> = schedule
        .categories()
        .iter()
        .map(|c| {
            c.group
                .as_deref()
                .and_then(|g| groups.iter().position(|x| x.id == g))
        })
        .collect();

    let n = groups.len();
    let mut numer = vec![[NeumaierSum::new(); QUINTILES]; n];
    let mut numer_total = vec![NeumaierSum::new(); n];
    let mut denom = [NeumaierSum::new(); QUINTILES];
    let mut denom_total = NeumaierSum::new();
    let mut by_group = vec![0.0; n];

    for (i, h) in pop.households().iter().enumerate() {
        by_group.iter_mut().for_each(|v| *v = 0.0);
        for (e, m) in h.expenditures.iter().zip(&member) {
            if let Some(g) = m {
                by_group[*g] += e;
            }
        }
        let budget: f64 = by_group.iter().sum();
        if budget <= 0.0 {
            continue;
        }
        let q = usize::from(quintiles.quintile_of(i)) - 1;
        denom[q].add(h.weight);
        denom_total.add(h.weight);
        for g in 0..n {
            let share = h.weight * by_group[g] / budget;
            numer[g][q].add(share);
            numer_total[g].add(share);
        }
    }

    let pct = |a: &NeumaierSum, b: &NeumaierSum| {
        let d = b.value();
        if d > 0.0 {
            100.0 * a.value() / d
        } else {
            f64::NAN
        }
    };
    let cells = numer
        .iter()
        .map(|row| std::array::from_fn(|q| pct(&row[q], &denom[q])))
        .collect();
    let total = numer_total.iter().map(|s| pct(s, &denom_total)).collect();
    ShareTable { groups, cells, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::assign_quintiles;
    use crate::microdata::{generate_synthetic, Household, Provenance};

    #[test]
    fn single_group_is_all_budget() {
        let s = Schedule::uniform();
        let p = generate_synthetic(4, 300, &s).unwrap();
        let t = budget_share_table(&p, &s, &assign_quintiles(&p));
        assert_eq!(t.cells.len(), 1);
        for v in t.cells[0].iter().chain(&t.total) {
            assert!((v - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn columns_close_and_cells_bounded() {
        let s = Schedule::plp68();
        let p = generate_synthetic(42, 3000, &s).unwrap();
        let t = budget_share_table(&p, &s, &assign_quintiles(&p));
        assert_eq!(t.cells.len(), 8);
        for c in t.column_sums() {
            assert!((c - 100.0).abs() < 0.01, "{c}");
        }
        for v in t.cells.iter().flatten().chain(&t.total) {
            assert!((0.0..=100.0).contains(v));
        }
    }

    #[test]
    fn hand_computed_shares() {
        let s = Schedule::from_json_str(include_str!("../../fixtures/oracle6.json"), "o").unwrap();
        let mk = |id: u64, w: f64, e: [f64; 6]| Household {
            id,
            weight: w,
            residents: 1,
            income_per_capita: 0.0,
            expenditures: e.to_vec(),
            nonmonetary_total: 0.0,
        };
        // both households land in different quintiles; overall column is
        // the weighted mean of their shares
        let p = Population::new(
            s.category_ids().map(str::to_string).collect(),
            vec![
                mk(1, 1.0, [50.0, 50.0, 0.0, 0.0, 0.0, 0.0]),
                mk(2, 3.0, [0.0, 100.0, 100.0, 0.0, 0.0, 200.0]),
            ],
            Provenance::InMemory,
        )
        .unwrap();
        let t = budget_share_table(&p, &s, &assign_quintiles(&p));
        let zero = t.groups.iter().position(|g| g.id == "zero").unwrap();
        let sel = t.groups.iter().position(|g| g.id == "is").unwrap();
        assert!((t.total[zero] - 100.0 * (0.5 * 1.0) / 4.0).abs() < 1e-12);
        assert!((t.total[sel] - 100.0 * (0.5 * 3.0) / 4.0).abs() < 1e-12);
    }
}
