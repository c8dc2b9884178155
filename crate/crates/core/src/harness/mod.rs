//! End-to-end orchestration: configuration, the round loop, telemetry and
//! sweeps.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod sweep;

pub use config::{lr_schedule, parse_config, AggregatorKind, DatasetSource, ExperimentConfig, PartitionKind};
pub use experiment::{load_datasets, run_experiment, Experiment, RunOutcome, CLIP_TOLERANCE};
pub use metrics::{read_metrics, read_summary, write_csv, write_summary, MetricsRow, SummaryRow};
pub use sweep::{sweep, sweep_to_dir, Grid};
