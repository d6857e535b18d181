//! Experiment plumbing: configuration, datasets, checkpoints, metrics and
//! the command implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data_io;
pub mod metrics;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use commands::{
    cmd_baseline_direct, cmd_gradient_check, cmd_prune, cmd_report, cmd_train, datasets, ReportTables, RunReport,
    TrainSummary,
};
pub use config::ExperimentConfig;
pub use data_io::{load_dataset, DataSpec};
pub use metrics::{read_metrics, EpochRecord, MetricsWriter};
