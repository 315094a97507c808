//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Dimension and argument
//! errors carry enough context to identify the offending call site without a
//! backtrace; checkpoint errors distinguish version mismatch (old but valid
//! file) from corruption (unreadable file).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands do not line up, or an input has a shape the
    /// operation cannot accept.
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    /// A scalar or enum argument is outside its documented domain.
    #[error("invalid argument `{arg}` in {op}: {detail}")]
    InvalidArgument {
        op: &'static str,
        arg: &'static str,
        detail: String,
    },

    /// A computation produced (or was handed) a NaN or infinity where a
    /// finite value is required.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// Checkpoint file was written by an incompatible code version.
    #[error("checkpoint version mismatch: file has {found}, this build expects {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    /// Checkpoint file exists but cannot be decoded.
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A text format (CSV, JSON, TOML) failed to parse.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for a [`Error::DimensionMismatch`].
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// Shorthand for an [`Error::InvalidArgument`].
    pub fn arg(op: &'static str, arg: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            arg,
            detail: detail.into(),
        }
    }

    /// Shorthand for an [`Error::NonFinite`].
    pub fn non_finite(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            op,
            detail: detail.into(),
        }
    }
}
