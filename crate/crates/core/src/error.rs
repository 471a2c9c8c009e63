use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the KALM pipeline.
#[derive(Debug, Error)]
pub enum KalmError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("stale tape: backward already ran on this tape")]
    StaleTape,

    #[error("gradient check invalid: {0}")]
    CheckInvalid(String),

    #[error("format error in {path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("encoding error in {path}: {msg}")]
    Encoding { path: String, msg: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("missing path: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, KalmError>;

impl KalmError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        KalmError::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KalmError::Io {
            path: path.into(),
            source,
        }
    }
}
