//! Quintiles, budget-share table, marginal rate impacts and distributional
//! scenario comparisons.

mod quintiles;
pub mod render;
mod scenarios;
mod shares;

use thiserror::Error;

use crate::engine::EngineError;
use crate::schedule::ScheduleError;
use crate::solver::SolveError;

pub use quintiles::{assign_quintiles, QuintileAssignment, QUINTILES};
pub use render::{render_impact_table, render_scenario_table, render_share_table, Rendered};
pub use scenarios::{
    QuintileRow, ScenarioKind, ScenarioOptions, ScenarioOutcome, ScenarioRunner, SwapMode,
};
pub use shares::{budget_share_table, ShareTable};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no scenarios selected")]
    NoScenarios,
    #[error("no rows to render")]
    NoRows,
    #[error("unknown scenario `{0}` (expected baseline, uniform_vat, plp68 or plp68_transfer_swap)")]
    UnknownScenario(String),
    #[error("pre-reform system raises no revenue; scenarios cannot be balanced against it")]
    NoBaselineRevenue,
    #[error("removing the food-basket exemption lowers net revenue by {0}; nothing to transfer")]
    NegativeExtraRevenue(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}
