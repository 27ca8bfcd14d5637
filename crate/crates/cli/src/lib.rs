//! Experiment harness around `regulab-core`: JSON configs in; CSV tables,
//! SVG plots, verdicts and a checksummed manifest out.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod plot;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
