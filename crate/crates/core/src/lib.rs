//! Demand shaping for deferrable traffic.
//!
//! Deferrable applications (DAs) are scheduled around an uncontrollable base
//! traffic profile so that the aggregate load is as flat as possible, i.e. the
//! time variance of the average profile `d = (b + Σ p_n)/N` is minimized.
//! Continuous DAs take any rate within per-slot bounds; discrete DAs run at a
//! fixed rate for a fixed number of consecutive slots.
//!
//! [`offline::offds_run`] solves the day with complete information by a
//! randomized distributed iteration; [`online::onds_run`] re-plans every slot
//! with predicted base traffic and expected future arrivals.

pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod offline;
pub mod online;
pub mod rng;
pub mod subproblems;
pub mod traffic;

pub use engine::{TracePoint, VirtualTrafficMode};
pub use error::{Error, Result};
pub use metrics::{gap_report, offline_bound, variance_objective, GapReport};
pub use model::{
    feasible_windows, validate_scenario, AlgoParams, ContinuousDa, Da, DiscreteDa, FeasibleSet, Scenario,
    SimplexWeights, TimeGrid, TrafficProfile, Violation,
};
pub use offline::{
    equilibrium_check, initial_profiles, offds_run, offds_step, rods_solve, DaSchedule, EquilibriumReport,
    RelaxedSolution, RunTrace, ScheduleKind, ScheduleState,
};
pub use online::{
    onds_run, onds_step, online_bound, valley_fill_feasibility, OnlineConfig, OnlineController, OnlineRun,
    ResolvePolicy, SlotReport,
};
pub use traffic::{
    bundled_diurnal, load_trace_csv, ArrivalModel, BasePredictor, BaseRealization, BaseTrafficModel,
    DeviationModel, ExactBase, FrozenForecast,
};
