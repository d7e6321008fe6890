use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A zero-norm vector reached an operation that needs a direction.
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("pairwise target must be 0 or 1, got {0}")]
    InvalidTarget(u8),

    #[error("encoder has no classification head")]
    MissingHead,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset too small: need at least {required} pairs, have {available}")]
    TooSmall { required: usize, available: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("format version mismatch: file is {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("training diverged at epoch {epoch}: non-finite parameters")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by bad input data or files rather than by the
    /// caller's configuration or a runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::VersionMismatch { .. }
                | Error::Corrupt(_)
                | Error::TooSmall { .. }
                | Error::LabelOutOfRange { .. }
                | Error::Io(_)
        )
    }
}
