use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("support mismatch at index {index}: p_k > 0 but q_k = 0")]
    SupportMismatch { index: usize },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal error {marginal_error:e})")]
    SolverFailure { iterations: usize, marginal_error: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from numerics rather than configuration or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::SolverFailure { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
