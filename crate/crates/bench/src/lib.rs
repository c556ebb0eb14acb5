//! Experiment harness: synthetic data, configs, pipelines and reports.

pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, LoadedConfig, Pipeline};
pub use error::{BenchError, BenchResult};
pub use run::{run, Overrides, ResultRow};
