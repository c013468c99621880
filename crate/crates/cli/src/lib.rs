//! Experiment driver for the graph differential equation models: config
//! resolution, per-seed training runs, artifacts and plots.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod manifest;
pub mod plot;
pub mod run;

pub use error::{CliError, Result};
