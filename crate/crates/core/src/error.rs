use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("unknown style `{0}`")]
    UnknownStyle(String),

    #[error("duplicate style `{0}`")]
    DuplicateStyle(String),

    #[error("invalid blend weights: {0}")]
    InvalidBlend(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incompatible architecture: {0}")]
    Incompatible(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("truncated payload: tensor `{tensor}` needs bytes {start}..{end}, file has {available}")]
    Truncated {
        tensor: String,
        start: usize,
        end: usize,
        available: usize,
    },

    #[error("format version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short stable identifier for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::UnknownStyle(_) => "unknown-style",
            Error::DuplicateStyle(_) => "duplicate-style",
            Error::InvalidBlend(_) => "invalid-blend",
            Error::Config(_) => "config",
            Error::Incompatible(_) => "incompatible",
            Error::NonFinite { .. } => "non-finite",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::Corrupt(_) => "corrupt",
            Error::Truncated { .. } => "truncated",
            Error::Version { .. } => "version",
            Error::Io { .. } => "io",
        }
    }
}
