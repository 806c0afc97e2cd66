use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crowdmap library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} (line {line}, column {column}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid record {record} ({image}): {message}")]
    Validation {
        record: usize,
        image: String,
        message: String,
    },

    #[error("point ({row}, {col}) lies outside a {rows}x{cols} image")]
    OutOfBounds {
        row: f64,
        col: f64,
        rows: usize,
        cols: usize,
    },

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image id mismatch: annotation {annotation:?} vs detections {detections:?}")]
    ImageMismatch { annotation: String, detections: String },

    #[error("no detections available")]
    NoDetections,

    #[error("bad {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error("non-finite loss in epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("empty record set")]
    EmptyRecords,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
