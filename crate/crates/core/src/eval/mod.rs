//! Tracking metrics and the experiment suites built on them.

pub mod experiments;
pub mod metrics;

pub use experiments::{
    compare_controllers, run_experiment, ControllerComparison, ExperimentKind, ExperimentOutcome, ExperimentSpec,
    GridPoint, PointResult, PointSummary, SUMMARY_CSV_VERSION,
};
pub use metrics::{ise, mean_square_diff, report, rss, step_metrics, IdealKind, MetricReport, StepMetrics};
