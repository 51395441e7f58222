//! Command-line pipeline: simulate plant data, train the network, calibrate
//! thresholds, monitor a run, fit the PCA/DPCA baselines and tabulate results.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use error::{CliError, CliResult};
