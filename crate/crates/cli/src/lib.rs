//! Experiment runner behind the `sensecourt` binary: config parsing,
//! orchestration of policy runs, benchmarks and truthfulness checks, and the
//! CSV/JSON writers.

use std::path::PathBuf;

pub mod commands;
pub mod config;
pub mod output;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config not found: {0}")]
    ConfigNotFound(PathBuf),
    #[error("invalid config {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Core(#[from] sensecourt::Error),
    #[error("{0}")]
    Capacity(String),
    #[error("truthfulness counterexample found (regret {0:e})")]
    Counterexample(f64),
}

impl CliError {
    /// 2 for problems with the config itself, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigNotFound(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
