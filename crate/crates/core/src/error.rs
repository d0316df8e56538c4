use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PdlError>;

#[derive(Debug, Error)]
pub enum PdlError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file {path}: {reason} (at byte offset {offset})")]
    MalformedFile {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("invalid label {label} at record {index} (expected < {num_classes})")]
    InvalidLabel {
        index: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("model file format error: {0}")]
    Format(String),

    #[error("missing model section `{0}`")]
    MissingSection(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PdlError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        PdlError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PdlError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(PdlError::DimensionMismatch { expected, actual });
    }
    Ok(())
}
