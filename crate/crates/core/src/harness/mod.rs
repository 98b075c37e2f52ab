//! Scenario documents, multi-seed experiments and parameter grid search.

mod experiment;
mod grid;
mod scenario;

pub use experiment::{
    aggregate, bin_label, ramp_label, run_experiment, run_seed, run_seeds, worker_pool,
    ExperimentResult, MetricSettings, SeedReport, SeedRun, Stat, GINI_OF_MEANS, WORKERS_ENV,
};
pub use grid::{grid_points, grid_search, GridPoint, GridResult, THROUGHPUT, TOTAL_DELAY};
pub use scenario::{
    apply_override, build_controller, ControllerKind, ControllerSpec, DemandSection,
    ExperimentSection, GridSpec, LaneOverride, NetworkSection, Objective, RampEntry, Scenario,
    SimulationSection,
};
