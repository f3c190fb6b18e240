use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection pipeline and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported format ({detail})")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("zero-sized image")]
    EmptyImage,

    #[error("dimension mismatch: {expected_h}x{expected_w} vs {actual_h}x{actual_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },

    #[error("degenerate histogram: image has a single intensity level")]
    DegenerateHistogram,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {stage} at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    #[error("singular value decomposition failed")]
    SvdFailure,

    #[error("no redundancy: field of view {fov} um must exceed step {step} um")]
    NoRedundancy { fov: f64, step: f64 },

    #[error("defect specification rejected: {0}")]
    InvalidDefect(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected_h: expected.0,
            expected_w: expected.1,
            actual_h: actual.0,
            actual_w: actual.1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
