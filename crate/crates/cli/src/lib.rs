//! Batch front end for the posterior solution-update pipeline: validated
//! TOML configurations in, deterministic CSV tables and a reproducibility
//! manifest out.

use thiserror::Error;

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod oracle_suite;
pub mod pipeline;

/// Process-level failure classes; [`CliError::exit_code`] fixes the shell
/// contract (0 success, 1 solver failure, 2 configuration error).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<hdsa_core::ConfigError> for CliError {
    fn from(e: hdsa_core::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<hdsa_core::MeshError> for CliError {
    fn from(e: hdsa_core::MeshError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<hdsa_core::SolveError> for CliError {
    fn from(e: hdsa_core::SolveError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<hdsa_core::CalibrationError> for CliError {
    fn from(e: hdsa_core::CalibrationError) -> Self {
        CliError::Solver(e.to_string())
    }
}
