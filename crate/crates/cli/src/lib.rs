//! Experiment driver: configuration, pipelines, identity checks, sweeps and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentConfig, LoadedConfig};
pub use error::{CliError, CliResult};
