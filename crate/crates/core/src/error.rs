use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MastError>;

#[derive(Debug, Error)]
pub enum MastError {
    #[error("spatial index {index} out of range for {len} locations")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} appears only on the {side} side")]
    DanglingLabel { label: i32, side: &'static str },

    #[error("channel mismatch: content has {content} channels, style has {style}")]
    ChannelMismatch { content: usize, style: usize },

    #[error("k = {k} exceeds the smaller side ({limit} locations)")]
    KTooLarge { k: usize, limit: usize },

    #[error("k = {k} exceeds region {label} (smaller side has {limit} locations)")]
    KTooLargeForRegion { k: usize, label: i32, limit: usize },

    #[error("affinity matrix is empty: no correspondences between content and style locations")]
    EmptyAffinity,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("projection pair is not orthogonal (residual {residual:.3e})")]
    NonOrthogonalPair { residual: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("bad tensor header: {0}")]
    BadHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("tensor shape must be non-empty with positive dimensions")]
    EmptyShape,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MastError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MastError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MastError::InvalidConfig(_) => 2,
            MastError::Io { .. } => 3,
            MastError::BadHeader(_)
            | MastError::TruncatedPayload { .. }
            | MastError::UnsupportedDtype(_)
            | MastError::EmptyShape => 4,
            MastError::IndexOutOfRange { .. }
            | MastError::ShapeMismatch(_)
            | MastError::DanglingLabel { .. }
            | MastError::ChannelMismatch { .. }
            | MastError::DimensionMismatch(_) => 5,
            MastError::KTooLarge { .. } | MastError::KTooLargeForRegion { .. } => 6,
            MastError::EmptyAffinity => 7,
            MastError::NonOrthogonalPair { .. }
            | MastError::NumericalFailure(_)
            | MastError::NonFinite(_) => 8,
        }
    }
}
