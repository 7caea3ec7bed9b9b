//! Batch experiment runner for the score neural operator: data generation,
//! training, sampling, evaluation, few-shot studies and the conditional
//! baseline, driven by one TOML config per run.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;

pub use config::{EmbeddingChoice, ExperimentConfig, LoadedConfig, Mode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] sno_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// 2 config, 3 training divergence, 4 IO, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Core(sno_core::Error::Divergence { .. } | sno_core::Error::JointDivergence { .. }) => 3,
            CliError::Core(sno_core::Error::Io(_)) => 4,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }
}
