//! Command-line drivers: simulation, clustering, estimation, backtests and
//! the Monte Carlo experiment tables.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod experiment;
pub mod manifest;

pub use config::{ExperimentConfig, Family, Mode, Overrides};
pub use error::{CliError, CliResult};
