use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration. `path` names the offending field when known.
    #[error("configuration error{}: {message}", path_suffix(.path))]
    Config { path: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A metric was requested over an empty set.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("sweep cell failed (method={method}, i={i}, j={j}): {source}")]
    CellFailed {
        method: String,
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed results: {0}")]
    Results(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn path_suffix(path: &str) -> String {
    if path.is_empty() {
        String::new()
    } else {
        format!(" at `{path}`")
    }
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than a failing computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Unsupported(_) | Error::Json(_) | Error::Results(_)
        )
    }
}
