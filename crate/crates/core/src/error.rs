use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the synthesis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not persistently exciting: {0}")]
    NotPersistentlyExciting(String),

    #[error("epsilon too large for data: {0}")]
    EpsilonTooLarge(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("structural constraint violated: {0}")]
    Structure(String),

    #[error("trajectories do not match: {0}")]
    Mismatch(String),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used in structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NotPersistentlyExciting(_) => "not-persistently-exciting",
            Error::EpsilonTooLarge(_) => "epsilon-too-large",
            Error::Infeasible(_) => "infeasible",
            Error::NoConvergence { .. } => "no-convergence",
            Error::Structure(_) => "structure",
            Error::Mismatch(_) => "mismatch",
            Error::EmptyEnsemble => "empty-ensemble",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
