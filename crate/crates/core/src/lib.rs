//! Static incidence microsimulation for a multi-tier consumption tax.
//!
//! A [`Schedule`] assigns each consumption category a treatment under the
//! reformed VAT (zero rate, reference rate, reduced fraction, specific
//! regime, selective excise, rent regime or untaxed) together with its
//! cashback class and pre-reform effective rate. Household expenditure
//! microdata ([`Population`]) are taxed by the [`engine`], the
//! revenue-neutral reference rate is found by the [`solver`], and the
//! [`analysis`] module produces quintile tables for policy scenarios.

pub mod analysis;
pub mod engine;
pub mod microdata;
pub mod par;
pub mod rates;
pub mod schedule;
pub mod solver;
pub mod sum;

pub use engine::{AggregateIncidence, Evaluator, HouseholdIncidence};
pub use microdata::{generate_synthetic, Household, Population};
pub use par::ExecMode;
pub use rates::{Basis, Rate};
pub use schedule::{Schedule, Selector};
pub use solver::SolveResult;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
