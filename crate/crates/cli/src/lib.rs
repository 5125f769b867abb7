//! Benchmark harness: experiment specs, runners, and report emission.
//!
//! The `specdraft` binary is a thin shell over this library so the runners
//! can be exercised directly from tests.

pub mod experiment;
pub mod report;

pub use experiment::{
    compare_fixed_vs_bandit, run_experiment, run_seed, sweep_tree_configs, ExperimentSpec,
    PromptSource,
};
pub use report::{emit_report, AggregateRow, EnvironmentStamp, ReportFormat, ResultRecord, RunRow};
