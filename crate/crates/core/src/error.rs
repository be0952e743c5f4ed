use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants line up with the exit-code categories of the command-line
/// front end: configuration problems, data problems and numeric divergence
/// are kept apart so callers can react to each differently.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("format error in {path} at byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("numeric divergence: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}
