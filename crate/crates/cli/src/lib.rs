//! Calibration, configuration and file output around the `robustfolio` core.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod prices;

pub use config::{OutputFormat, Overrides, RunConfig};
pub use error::{CliError, CliResult};
