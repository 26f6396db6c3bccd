use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read input: {0}")]
    Input(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no parseable readings in input ({skipped} lines skipped)")]
    EmptyDataset { skipped: usize },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown sensor {0}")]
    UnknownSensor(u32),

    #[error("correlation undefined (constant input)")]
    UndefinedCorrelation,

    #[error("neighbor selection failed for sensor {sensor}: {message}")]
    Selection { sensor: u32, message: String },

    #[error("missing neighbor window: sensor {sensor}, day {day}, window {window}")]
    MissingNeighbor { sensor: u32, day: i64, window: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training data needs both classes: {0}")]
    SingleClass(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
