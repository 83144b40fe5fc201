//! Experiment harness for the demand-shaping engine.

pub mod error;
pub mod experiment;
pub mod output;

pub use error::{HarnessError, Result};
pub use experiment::{
    compare_cases, compare_days, default_scenario, gap_summary, iteration_study, penetration_sweep, rep_seed, run_case,
    sigma_sweep, Case, IterationPoint, RepOutcome, Replicate, Settings, SweepPoint,
};
