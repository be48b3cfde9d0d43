use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: file contains no values")]
    EmptySeries { path: PathBuf },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("network file: byte {offset}: {message}")]
    NetworkFormat { offset: usize, message: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("linear solve failed: {0}")]
    Factorization(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("no active parameters to fit")]
    EmptyActiveSet,

    #[error("replicate {replicate} produced non-finite parameters after {attempts} attempts")]
    ReplicateFailed { replicate: usize, attempts: usize },

    #[error("run {run_index}: {source}")]
    Run {
        run_index: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Io,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::EmptySeries { .. }
            | Error::Parse { .. }
            | Error::NetworkFormat { .. }
            | Error::Invalid(_)
            | Error::Dimension { .. } => ErrorKind::Validation,
            Error::Factorization(_)
            | Error::NonFiniteLoss { .. }
            | Error::EmptyActiveSet
            | Error::ReplicateFailed { .. } => ErrorKind::Numeric,
            Error::Run { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
