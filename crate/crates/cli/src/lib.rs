//! Command-line orchestration of the fiber atlas pipeline.

pub mod analysis;
pub mod cohort;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{load_config, validate_config, ConfigIssue, PipelineConfig};
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, RunManifest, RunOptions};
