use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a structural requirement (bad file, bad sequence, bad index).
    #[error("data error: {0}")]
    Data(String),

    /// Configuration or hyper-parameter values are invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Array shapes disagree with each other.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Argument outside the domain of a mathematical function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The chain has more than one stationary distribution.
    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_) | Error::Csv { .. } | Error::Json { .. } | Error::Io { .. }
        )
    }
}
