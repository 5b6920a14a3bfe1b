//! Household expenditure records, strict CSV ingestion and a seeded
//! synthetic population.
//!
//! CSV layout: a header row `id,weight,residents,income_pc,nonmonetary_total`
//! followed by one column per schedule category id (any order). Values are
//! monthly currency amounts with `.` as decimal separator.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use thiserror::Error;

use crate::schedule::Schedule;

pub const FIXED_COLUMNS: [&str; 5] = ["id", "weight", "residents", "income_pc", "nonmonetary_total"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("header line 1: missing column `{0}`")]
    MissingColumn(String),
    #[error("header line 1: column `{0}` is not a category of the schedule")]
    UnexpectedColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("line {line}, column `{column}`: {message}")]
    Invalid {
        line: u64,
        column: String,
        message: String,
    },
    #[error("line {line}: duplicate household id {id}")]
    DuplicateId { line: u64, id: u64 },
    #[error("household {id}: {message}")]
    Household { id: u64, message: String },
    #[error("population is empty")]
    Empty,
}

/// One survey household. Amounts are monthly; `expenditures` are monetary
/// and aligned with the population's category list.
#[derive(Debug, Clone, PartialEq)]
pub struct Household {
    pub id: u64,
    /// Survey expansion factor.
    pub weight: f64,
    pub residents: u32,
    pub income_per_capita: f64,
    pub expenditures: Vec<f64>,
    pub nonmonetary_total: f64,
}

impl Household {
    pub fn monetary_total(&self) -> f64 {
        self.expenditures.iter().sum()
    }

    /// Monetary plus non-monetary expenditure per resident; the ranking
    /// variable for quintiles.
    pub fn per_capita_total(&self) -> f64 {
        (self.monetary_total() + self.nonmonetary_total) / f64::from(self.residents)
    }

    fn check(&self, n_categories: usize) -> Result<(), String> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(format!("weight {} must be positive", self.weight));
        }
        if self.residents == 0 {
            return Err("residents must be at least 1".into());
        }
        if !(self.income_per_capita.is_finite() && self.income_per_capita >= 0.0) {
            return Err(format!("income_pc {} must be non-negative", self.income_per_capita));
        }
        if !(self.nonmonetary_total.is_finite() && self.nonmonetary_total >= 0.0) {
            return Err(format!(
                "nonmonetary_total {} must be non-negative",
                self.nonmonetary_total
            ));
        }
        if self.expenditures.len() != n_categories {
            return Err(format!(
                "{} expenditures for {n_categories} categories",
                self.expenditures.len()
            ));
        }
        if let Some(v) = self.expenditures.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(format!("expenditure {v} must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    File(PathBuf),
    Synthetic { seed: u64 },
    InMemory,
}

/// Validated, immutable household population, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    categories: Vec<String>,
    households: Vec<Household>,
    provenance: Provenance,
}

impl Population {
    pub fn new(
        categories: Vec<String>,
        mut households: Vec<Household>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        if households.is_empty() {
            return Err(DataError::Empty);
        }
        let mut seen = HashSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(DataError::DuplicateColumn(c.clone()));
            }
        }
        for h in &households {
            h.check(categories.len())
                .map_err(|message| DataError::Household { id: h.id, message })?;
        }
        households.sort_by_key(|h| h.id);
        if let Some(w) = households.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(DataError::Household {
                id: w[0].id,
                message: "duplicate household id".into(),
            });
        }
        Ok(Population {
            categories,
            households,
            provenance,
        })
    }

    /// Category ids, in the column order of `expenditures`.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn households(&self) -> &[Household] {
        &self.households
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    /// Loads `path` against the category set of `schedule`.
    pub fn load(path: impl AsRef<Path>, schedule: &Schedule) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut pop = Self::read(file, schedule)?;
        pop.provenance = Provenance::File(path.to_path_buf());
        Ok(pop)
    }

    pub fn read<R: Read>(reader: R, schedule: &Schedule) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let csv_err = |e: csv::Error| DataError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        };
        let header = rdr.headers().map_err(csv_err)?.clone();

        let mut seen = HashSet::new();
        for col in header.iter() {
            if !seen.insert(col) {
                return Err(DataError::DuplicateColumn(col.to_string()));
            }
        }
        let position = |name: &str| header.iter().position(|h| h == name);
        let mut fixed = [0usize; 5];
        for (slot, name) in fixed.iter_mut().zip(FIXED_COLUMNS) {
            *slot = position(name).ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        }
        let category_cols: Vec<usize> = schedule
            .category_ids()
            .map(|id| position(id).ok_or_else(|| DataError::MissingColumn(id.to_string())))
            .collect::<Result<_, _>>()?;
        if let Some(extra) = header
            .iter()
            .find(|h| !FIXED_COLUMNS.contains(h) && schedule.category_index(h).is_none())
        {
            return Err(DataError::UnexpectedColumn(extra.to_string()));
        }

        let mut households = Vec::new();
        let mut ids = HashSet::new();
        for record in rdr.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map_or(0, |p| p.line());
            let cell = |col: usize| -> Result<f64, DataError> {
                let raw = record.get(col).unwrap_or("");
                let name = header.get(col).unwrap_or("?").to_string();
                let v: f64 = raw.parse().map_err(|_| DataError::Invalid {
                    line,
                    column: name.clone(),
                    message: format!("`{raw}` is not a number"),
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(DataError::Invalid {
                        line,
                        column: name,
                        message: format!("{v} must be a finite non-negative number"),
                    });
                }
                Ok(v)
            };
            let integer = |col: usize| -> Result<u64, DataError> {
                let raw = record.get(col).unwrap_or("");
                raw.parse().map_err(|_| DataError::Invalid {
                    line,
                    column: header.get(col).unwrap_or("?").to_string(),
                    message: format!("`{raw}` is not a non-negative integer"),
                })
            };

            let id = integer(fixed[0])?;
            let weight = cell(fixed[1])?;
            if weight <= 0.0 {
                return Err(DataError::Invalid {
                    line,
                    column: "weight".into(),
                    message: "weight must be positive".into(),
                });
            }
            let residents = integer(fixed[2])?;
            if residents == 0 || residents > u64::from(u32::MAX) {
                return Err(DataError::Invalid {
                    line,
                    column: "residents".into(),
                    message: format!("{residents} residents; expected at least 1"),
                });
            }
            if !ids.insert(id) {
                return Err(DataError::DuplicateId { line, id });
            }
            households.push(Household {
                id,
                weight,
                residents: residents as u32,
                income_per_capita: cell(fixed[3])?,
                nonmonetary_total: cell(fixed[4])?,
                expenditures: category_cols
                    .iter()
                    .map(|&c| cell(c))
                    .collect::<Result<_, _>>()?,
            });
        }

        Population::new(
            schedule.category_ids().map(str::to_string).collect(),
            households,
            Provenance::InMemory,
        )
    }

    /// Writes the documented CSV layout. Floats use the shortest decimal
    /// representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let to_err = |e: csv::Error| DataError::Csv {
            line: 0,
            message: e.to_string(),
        };
        let header = FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.categories.iter().cloned());
        w.write_record(header).map_err(to_err)?;
        for h in &self.households {
            let row = [
                h.id.to_string(),
                h.weight.to_string(),
                h.residents.to_string(),
                h.income_per_capita.to_string(),
                h.nonmonetary_total.to_string(),
            ]
            .into_iter()
            .chain(h.expenditures.iter().map(f64::to_string));
            w.write_record(row).map_err(to_err)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<output>".into(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Σ weight × residents.
    pub fn weighted_persons(&self) -> f64 {
        crate::sum::sum(self.households.iter().map(|h| h.weight * f64::from(h.residents)))
    }
}

/// Per-capita monetary expenditure at which Engel weights equal their
/// configured `share`.
const ENGEL_REFERENCE: f64 = 1000.0;

/// Generates `n` households whose budgets follow the Engel profiles in
/// `schedule`. Deterministic in `(seed, n, schedule)`.
///
/// The distributions are illustrative: per-capita total expenditure is
/// log-normal (median 1100/month), the non-monetary share falls with
/// expenditure, and income per capita scatters log-normally around
/// expenditure so that a sizeable minority sits below the cashback threshold.
pub fn generate_synthetic(seed: u64, n: usize, schedule: &Schedule) -> Result<Population, DataError> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residents_dist = WeightedIndex::new([15u32, 25, 25, 20, 10, 5]).expect("static weights");
    let pc_total_dist = LogNormal::new(1100f64.ln(), 0.75).expect("valid log-normal");
    let income_noise = Normal::new(0.05f64, 0.35).expect("valid normal");
    let budget_noise = LogNormal::new(0.0, 0.25).expect("valid log-normal");

    let profiles: Vec<(f64, f64, f64)> = schedule
        .categories()
        .iter()
        .map(|c| {
            c.engel
                .as_ref()
                .map_or((1.0, 0.0, 1.0), |e| (e.share, e.elasticity, e.participation))
        })
        .collect();

    let cents = |x: f64| (x * 100.0).round() / 100.0;
    let mut households = Vec::with_capacity(n);
    let mut budget = vec![0.0; profiles.len()];
    for id in 1..=n as u64 {
        let residents = residents_dist.sample(&mut rng) as u32 + 1;
        let weight = cents(rng.gen_range(200.0..2000.0));
        let pc_total: f64 = pc_total_dist.sample(&mut rng);
        let nonmonetary_share = 0.25 / (1.0 + pc_total / 800.0) + rng.gen_range(0.0..0.05);
        let pc_monetary = pc_total * (1.0 - nonmonetary_share);
        let income_per_capita = cents(pc_total * income_noise.sample(&mut rng).exp());

        for (slot, &(share, elasticity, participation)) in budget.iter_mut().zip(&profiles) {
            // draw unconditionally so the stream does not depend on branches
            let take = rng.gen_bool(participation);
            let noise = budget_noise.sample(&mut rng);
            *slot = if take {
                share * (pc_monetary / ENGEL_REFERENCE).powf(elasticity) * noise
            } else {
                0.0
            };
        }
        let total_weight: f64 = budget.iter().sum();
        let monetary = pc_monetary * f64::from(residents);
        let expenditures = if total_weight > 0.0 {
            budget.iter().map(|b| cents(monetary * b / total_weight)).collect()
        } else {
            vec![0.0; budget.len()]
        };
        households.push(Household {
            id,
            weight,
            residents,
            income_per_capita,
            expenditures,
            nonmonetary_total: cents(pc_total * nonmonetary_share * f64::from(residents)),
        });
    }

    Population::new(
        schedule.category_ids().map(str::to_string).collect(),
        households,
        Provenance::Synthetic { seed },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> Schedule {
        Schedule::from_json_str(include_str!("../fixtures/oracle6.json"), "oracle6").unwrap()
    }

    const HEADER: &str = "id,weight,residents,income_pc,nonmonetary_total,alimentos,geral,energia,aluguel,restaurantes,tabaco";

    fn load(text: &str) -> Result<Population, DataError> {
        Population::read(text.as_bytes(), &schedule())
    }

    #[test]
    fn three_row_happy_path() {
        let text = format!(
            "{HEADER}\n1,1,2,300,10,1,2,3,4,5,6\n2,2.5,1,900,0,0,0,0,0,0,0\n3,1,3,100,5,10,10,10,10,10,10\n"
        );
        let p = load(&text).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.households()[0].expenditures, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn column_order_is_free() {
        let text = "tabaco,id,weight,residents,income_pc,nonmonetary_total,alimentos,geral,energia,aluguel,restaurantes\n9,1,1,1,1,1,1,2,3,4,5\n";
        let p = load(text).unwrap();
        assert_eq!(p.households()[0].expenditures, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
    }

    #[test]
    fn missing_category_column_is_named() {
        let text = "id,weight,residents,income_pc,nonmonetary_total,geral,energia,aluguel,restaurantes,tabaco\n1,1,1,1,1,1,1,1,1,1\n";
        match load(text) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "alimentos"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extra_column_is_rejected() {
        let text = format!("{HEADER},joias\n1,1,1,1,1,1,1,1,1,1,1,1\n");
        match load(&text) {
            Err(DataError::UnexpectedColumn(c)) => assert_eq!(c, "joias"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_weight_reports_the_line() {
        let text = format!("{HEADER}\n1,1,1,1,1,1,1,1,1,1,1\n2,0,1,1,1,1,1,1,1,1,1\n");
        match load(&text) {
            Err(DataError::Invalid { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "weight");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_cells() {
        let neg = format!("{HEADER}\n1,1,1,1,1,-1,1,1,1,1,1\n");
        assert!(matches!(load(&neg), Err(DataError::Invalid { line: 2, .. })));
        let text = format!("{HEADER}\n1,1,1,1,1,abc,1,1,1,1,1\n");
        let err = load(&text).unwrap_err();
        assert!(err.to_string().contains("alimentos"), "{err}");
        let text = format!("{HEADER}\n1,1,0,1,1,1,1,1,1,1,1\n");
        assert!(matches!(load(&text), Err(DataError::Invalid { .. })));
        let text = format!("{HEADER}\n1,1,1,NaN,1,1,1,1,1,1,1\n");
        assert!(matches!(load(&text), Err(DataError::Invalid { .. })));
        let text = format!("{HEADER}\n1,1,1,1,1,1,1,1,1,1,1\n1,1,1,1,1,1,1,1,1,1,1\n");
        assert!(matches!(load(&text), Err(DataError::DuplicateId { line: 3, id: 1 })));
        assert!(matches!(load(&format!("{HEADER}\n")), Err(DataError::Empty)));
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let s = Schedule::plp68();
        let a = generate_synthetic(42, 2000, &s).unwrap();
        let b = generate_synthetic(42, 2000, &s).unwrap();
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let c = generate_synthetic(43, 2000, &s).unwrap();
        assert_ne!(a, c);
        for h in a.households() {
            assert!(h.check(s.categories().len()).is_ok());
        }
        let threshold = s.eligibility_threshold();
        let below = a
            .households()
            .iter()
            .filter(|h| h.income_per_capita <= threshold)
            .count();
        assert!(below > 100 && below < 1500, "{below} eligible");
        assert!(matches!(generate_synthetic(1, 0, &s), Err(DataError::Empty)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn household(id: u64) -> impl Strategy<Value = Household> {
            (
                1e-3f64..1e4,
                1u32..12,
                0.0f64..1e5,
                proptest::collection::vec(0.0f64..1e5, 6),
                0.0f64..1e4,
            )
                .prop_map(move |(weight, residents, income, expenditures, nm)| Household {
                    id,
                    weight,
                    residents,
                    income_per_capita: income,
                    expenditures,
                    nonmonetary_total: nm,
                })
        }

        proptest! {
            #[test]
            fn csv_round_trip(hs in proptest::collection::vec(household(0), 1..20)) {
                let hs: Vec<Household> = hs
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut h)| { h.id = i as u64 * 7 + 1; h })
                    .collect();
                let cats = schedule().category_ids().map(str::to_string).collect();
                let p = Population::new(cats, hs, Provenance::InMemory).unwrap();
                let mut buf = Vec::new();
                p.write_csv(&mut buf).unwrap();
                let q = Population::read(buf.as_slice(), &schedule()).unwrap();
                for (a, b) in p.households().iter().zip(q.households()) {
                    prop_assert_eq!(a.id, b.id);
                    prop_assert!((a.weight - b.weight).abs() <= 1e-9 * a.weight.max(1.0));
                    for (x, y) in a.expenditures.iter().zip(&b.expenditures) {
                        prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
                    }
                }
                prop_assert_eq!(p.len(), q.len());
            }
        }
    }
}
