//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up; the message names both shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Kernel geometry the convolution path does not support (even sides).
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operation called out of order (e.g. backward before forward).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Non-finite values where finite ones are required; aborts the step.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed manifest row; `line` is 1-based within the file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Semantically invalid input (unknown label, duplicate path, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Model spec that cannot be built.
    #[error("model spec error: {0}")]
    Spec(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: not a checkpoint file")]
    BadMagic,

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("unsupported checkpoint version {0}")]
    UnknownVersion(u16),
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
