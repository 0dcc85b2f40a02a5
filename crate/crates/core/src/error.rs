use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("unknown dtype {0:?} (only \"float32-le\" is supported)")]
    UnknownDtype(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },

    #[error("manifest/payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLengthMismatch { expected: u64, actual: u64 },

    #[error("non-finite value at ({layer}, {row}, {col})")]
    NonFinite { layer: usize, row: usize, col: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty sentence")]
    EmptySentence,

    #[error("empty layer set")]
    EmptyLayerSet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
