//! Training runs, comparisons across activations, and their output files.

pub mod config;
pub mod output;
pub mod runner;
pub mod svg;

pub use config::{DatasetKind, RunConfig};
pub use output::{emit_outputs, Checkpoint, OutputFiles, TRAJECTORY_CSV_HEADER};
pub use runner::{
    compare_runs, train_run, ActivationSummary, CellSummary, CompareSummary, RunResult,
    TrajectoryRecord,
};
