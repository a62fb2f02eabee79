use thiserror::Error;

use crate::cache::Region;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("anchors already set")]
    AnchorsAlreadySet,

    #[error("region mismatch: expected {expected}, got {actual}")]
    RegionMismatch { expected: String, actual: Region },

    #[error("frame {got} out of temporal order (expected frame {expected})")]
    FrameOutOfOrder { expected: usize, got: usize },

    #[error("frame {frame} has {actual} tokens before masking, expected {expected}")]
    FrameSizeMismatch {
        frame: usize,
        expected: usize,
        actual: usize,
    },

    #[error("cache window of {capacity} frames is full")]
    CapacityExceeded { capacity: usize },

    #[error("rebase by {delta_t} would make temporal index {t} negative")]
    NegativeTemporalIndex { t: u32, delta_t: u32 },

    #[error("attention has no keys")]
    EmptyKeySet,

    #[error("query row {row} has no visible keys")]
    NoVisibleKeys { row: usize },

    #[error("column ranges overlap at column {column}")]
    OverlappingRanges { column: usize },

    #[error("column ranges leave column {column} uncovered")]
    UncoveredColumn { column: usize },

    #[error("invariant violated: {0}")]
    InvariantViolated(String),

    #[error("config not found: {0}")]
    ConfigNotFound(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
