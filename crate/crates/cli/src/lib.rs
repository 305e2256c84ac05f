//! Config-driven experiment runner for the `shield` binary.

pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod emit;
pub mod experiment;

use std::path::{Path, PathBuf};

use cbf_shield::{AnalysisError, BarrierError, ShieldError};
use thiserror::Error;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use experiment::{run_experiment, write_outputs, Outcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl From<BarrierError> for CliError {
    fn from(e: BarrierError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Shield(ShieldError::Config(_)) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}
