use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants line up with the exit-code classes used by the command line
/// front-end: configuration, numerical aborts, artifact mismatches and IO.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid hyperparameters, ranges or option combinations.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a precondition (unknown labels, too few samples...).
    #[error("data error: {0}")]
    Data(String),

    /// Caller broke an API contract (shape mismatch, invalid index...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A loss or metric became non-finite.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Stored tensor does not match its manifest.
    #[error("shape mismatch for `{name}`: manifest expects {expected} bytes, blob has {actual}")]
    ShapeMismatch {
        name: String,
        expected: u64,
        actual: u64,
    },

    /// Persisted artifact is malformed, missing pieces or has an unknown version.
    #[error("persistence error: {0}")]
    Persistence(String),

    /// Checkpoint does not fit the model or configuration it is loaded into.
    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
