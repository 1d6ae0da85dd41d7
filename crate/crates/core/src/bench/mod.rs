//! Benchmark runner, parameter sweeps and reports.

pub mod report;
pub mod runner;
pub mod sweep;

pub use report::{Aggregates, Counters, Mode, RunReport, StepRecord};
pub use runner::{run_trace, RunOptions, RunOutcome};
pub use sweep::{sweep, Axis, Param, SweepResult, SweepRow};
