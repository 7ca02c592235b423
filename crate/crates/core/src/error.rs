use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes, used by the CLI to choose process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters or malformed configuration.
    Config,
    /// Missing, truncated, or inconsistent data artifacts.
    Data,
    /// Non-finite values, divergence, or degenerate numerics.
    Numeric,
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Header { path: PathBuf, message: String },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{context}: non-finite samples at indices {indices:?}")]
    NonFinite {
        context: String,
        indices: Vec<usize>,
    },

    #[error("chamber placement failed: {0}")]
    Placement(String),

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn header(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CoreError::Header {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            CoreError::Grid(_) | CoreError::Parameter(_) => ErrorClass::Config,
            CoreError::Io { .. }
            | CoreError::Header { .. }
            | CoreError::Placement(_)
            | CoreError::Mismatch(_)
            | CoreError::Empty(_) => ErrorClass::Data,
            CoreError::NonFinite { .. } | CoreError::Numeric(_) | CoreError::Diverged { .. } => {
                ErrorClass::Numeric
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
