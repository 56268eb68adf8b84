use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// Inputs were produced under a different config.
    #[error("stale input {path}: made with config {found}, current config is {expected}")]
    Stale { path: PathBuf, expected: String, found: String },
    /// A required earlier stage has not been run.
    #[error("missing prerequisite: {0}")]
    Precondition(String),
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("validation failed: {0}")]
    Validation(String),
    /// File content disagrees with the hash recorded in the manifest.
    #[error("corrupted input {path}: sha256 {found} does not match manifest {expected}")]
    Corrupted { path: PathBuf, expected: String, found: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Stale { .. } | CliError::Precondition(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Corrupted { .. } | CliError::Io { .. } => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub fn convergence(err: impl std::fmt::Display) -> Self {
        CliError::Convergence(err.to_string())
    }
}
