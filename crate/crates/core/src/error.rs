use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("negative loss {loss} for sample {index}")]
    NegativeLoss { index: usize, loss: f64 },

    #[error("non-finite value in {context}{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        iteration: Option<usize>,
    },

    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,

    #[error("dimension {dimension} exceeds the enumeration cap of {cap}; raise the cap explicitly to enumerate")]
    EnumerationCap { dimension: usize, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn non_finite(context: &'static str) -> Self {
        Error::NonFinite {
            context,
            iteration: None,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::NonFinite { context, .. } => Error::NonFinite {
                context,
                iteration: Some(iteration),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
