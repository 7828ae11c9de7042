use std::io;

use thiserror::Error;

/// Errors surfaced by tensor operations, geometry construction, file I/O
/// and training configuration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupted statistics: {0}")]
    CorruptStatistics(String),

    #[error("unknown domain id {0}")]
    UnknownDomain(usize),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
