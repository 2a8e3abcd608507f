//! Synthetic scenarios: the F₂ lower-bound construction with its sample
//! sweep, and the overlapping-subpopulation scenario.

pub mod f2;
pub mod subpop;

pub use f2::{
    generate_f2, run_sample_sweep, BudgetSummary, F2Construction, SweepConfig, SweepResult, SweepRow,
    DEFAULT_FAMILY_SIZE,
};
pub use subpop::{generate_subpop_scenario, SubpopParams, SubpopScenario, COARSE_ID, FINE_ID};
