//! Experiment driver: configs, the training loop, replicates and reports.

pub mod config;
pub mod presets;
pub mod report;
pub mod run;
pub mod store;

pub use config::{lr_at, ExperimentConfig, LambdaSetting, LrSchedule};
pub use run::{train_one_run, EpochRecord, PreparedViews, RunResult, TrainedRun};
pub use store::{evaluate, mean_std, run_replicates, write_run, ReplicateOptions, Summary};
