//! Experiment harness: configuration, training, repeated runs and reports.

pub mod config;
pub mod objective;
pub mod report;
pub mod suite;
pub mod train;

pub use config::{load_configs, parse_configs, DatasetSource, ExperimentConfig, NetworkConfig, SynthSource};
pub use objective::{LossKind, Objective, Prepared};
pub use report::{parse_grouping, report, Comparison, GroupField, GroupRow, Report};
pub use suite::{prepare_run, read_records, run_once, run_suite, run_suite_on, PreparedRun, ResultRecord};
pub use train::{derive_seed, evaluate, train, TrainHistory, TrainedModel};
