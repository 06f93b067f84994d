use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("config parse error at line {line}, key `{key}`: {reason}")]
    ConfigParse {
        line: usize,
        key: String,
        reason: String,
    },

    #[error("time {t} s outside camera path [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("frame timestamps not strictly increasing at frame {index}")]
    NonMonotoneTimestamps { index: usize },

    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated data: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("nonzero padding in record {record}")]
    NonzeroPadding { record: usize },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing input `{}`", .0.display())]
    MissingInput(PathBuf),

    #[error("i/o error on `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scale {scale}: {source}")]
    Sweep {
        scale: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig { .. } => "invalid-config",
            Error::ConfigParse { .. } => "config-parse",
            Error::TimeOutOfRange { .. } => "time-out-of-range",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonMonotoneTimestamps { .. } => "non-monotone-timestamps",
            Error::TooFewFrames(_) => "too-few-frames",
            Error::Parse { .. } => "parse",
            Error::BadMagic { .. } => "bad-magic",
            Error::Truncated { .. } => "truncated",
            Error::NonzeroPadding { .. } => "nonzero-padding",
            Error::Format(_) => "format",
            Error::EmptyDataset => "empty-dataset",
            Error::MissingInput(_) => "missing-input",
            Error::Io { .. } => "io",
            Error::Sweep { source, .. } => source.kind(),
        }
    }
}
