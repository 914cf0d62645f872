use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum EpiError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("stale forward cache: store changed since the forward pass")]
    StaleCache,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("run aborted at step {step}: {source}")]
    RunAborted {
        step: usize,
        #[source]
        source: Box<EpiError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EpiError>;

impl EpiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EpiError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(EpiError::LengthMismatch { expected, actual })
        }
    }
}
