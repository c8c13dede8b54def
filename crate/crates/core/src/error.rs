use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("not NIfTI-1: {0}")]
    NotNifti(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated NIfTI payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    /// Statistical procedure has no defined result for the input
    /// (zero variance, rank-deficient design, total ties).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("study {study}: {source}")]
    Study {
        study: String,
        #[source]
        source: Box<Error>,
    },

    #[error("segmenter failed: {0}")]
    Segmenter(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
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

    /// Attach the offending study id to an error.
    pub fn for_study(self, study: impl Into<String>) -> Self {
        Error::Study {
            study: study.into(),
            source: Box::new(self),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
