//! Experiment harness for `icmeas-core`: TOML configs, file formats,
//! parallel end-to-end runs, artifact bundles and report replay.

pub mod bundle;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{ConfigError, HarnessError};
pub use pipeline::{compare_schemes, run_experiment, RunResult};
pub use report::{Format, ReportDocument};
