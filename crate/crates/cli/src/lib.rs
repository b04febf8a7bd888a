//! Command-line harness: dataset generation, training, evaluation and the
//! merged reproduction report.

pub mod commands;
pub mod config;
pub mod error;
pub mod runs;
pub mod summary;

pub use config::RunConfig;
pub use error::{exit, CliError, Result};
