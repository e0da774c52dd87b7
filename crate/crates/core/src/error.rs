use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("no positives survived binarization")]
    NoPositives,

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("user {user} has {positives} positives, too few for a train/validation/test split")]
    TooFewPositives { user: String, positives: usize },

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("file truncated while reading {what}")]
    Truncated { what: &'static str },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {what} {index} >= {bound}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for the one-line machine-readable
    /// failure reason printed by the command line tool.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::NoPositives => "no-positives",
            Error::EmptyDataset => "empty-dataset",
            Error::TooFewPositives { .. } => "too-few-positives",
            Error::BadMagic { .. } => "bad-magic",
            Error::UnsupportedVersion { .. } => "version-mismatch",
            Error::Truncated { .. } => "truncated",
            Error::Corrupt(_) => "corrupt",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::OutOfRange { .. } => "out-of-range",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NonFinite { .. } => "non-finite",
            Error::Diverged { .. } => "diverged",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
