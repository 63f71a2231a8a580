//! Experiment driver: training runs with per-epoch validation and model
//! selection, metrics export, and paired comparison of repeated runs.

mod compare;
mod config;
mod metrics;
mod train;

pub use compare::{compare_runs, summary_table, MetricSummary, RunComparison, SummaryRow};
pub use config::{ExperimentConfig, KeyValues, TrainSettings};
pub use metrics::{export_metrics, parse_metrics, read_record, write_record, EpochRow, RunRecord};
pub use train::{evaluate_error, run_dir, train_run, write_run_outputs, Clock, RunOutcome};
