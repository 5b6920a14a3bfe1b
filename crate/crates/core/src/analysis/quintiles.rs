use crate::microdata::Population;
use crate::sum::sum;

pub const QUINTILES: usize = 5;

/// Household-weight quintiles of per-capita total (monetary plus
/// non-monetary) expenditure.
#[derive(Debug, Clone, PartialEq)]
pub struct QuintileAssignment {
    /// Quintile index in `1..=5` for each household, in population order.
    quintile: Vec<u8>,
    /// Weighted 20/40/60/80% quantiles of per-capita total expenditure.
    pub boundaries: [f64; 4],
    /// Share of total household weight in each quintile.
    pub weight_share: [f64; QUINTILES],
}

impl QuintileAssignment {
    pub fn quintile_of(&self, index: usize) -> u8 {
        self.quintile[index]
    }

    pub fn quintiles(&self) -> &[u8] {
        &self.quintile
    }
}

/// Sorts households by per-capita total expenditure (ties by id) and cuts
/// cumulative weight at the 20% marks. A household belongs to the quintile
/// holding the midpoint of its weight interval, so each quintile's weight
/// share is within one household weight of 20%.
pub fn assign_quintiles(pop: &Population) -> QuintileAssignment {
    let households = pop.households();
    let key: Vec<f64> = households.iter().map(|h| h.per_capita_total()).collect();
    let mut order: Vec<usize> = (0..households.len()).collect();
    order.sort_by(|&a, &b| {
        key[a]
            .total_cmp(&key[b])
            .then(households[a].id.cmp(&households[b].id))
    });

    let total = sum(households.iter().map(|h| h.weight));
    let mut quintile = vec![0u8; households.len()];
    let mut boundaries = [f64::NAN; 4];
    let mut weights = [Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut cumulative = 0.0;
    let mut next_mark = 0;
    for &i in &order {
        let w = households[i].weight;
        let before = cumulative;
        cumulative += w;
        let mid = (before + 0.5 * w) / total;
        let q = ((mid * QUINTILES as f64).floor() as usize).min(QUINTILES - 1);
        quintile[i] = q as u8 + 1;
        weights[q].push(w);
        while next_mark < 4 && cumulative / total >= (next_mark + 1) as f64 / QUINTILES as f64 {
            boundaries[next_mark] = key[i];
            next_mark += 1;
        }
    }
    for b in boundaries.iter_mut().filter(|b| b.is_nan()) {
        *b = key[*order.last().expect("population is non-empty")];
    }
    let weight_share = weights.map(|ws| sum(ws) / total);
    QuintileAssignment {
        quintile,
        boundaries,
        weight_share,
    }
}
