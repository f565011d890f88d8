//! Experiment runner: configuration, per-command pipelines and manifests.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, CliResult};
