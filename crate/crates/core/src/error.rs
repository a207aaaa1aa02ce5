use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient data: need at least {required} vectors, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("code index {index} out of range for subspace {subspace} (K = {codewords})")]
    CodeOutOfRange {
        subspace: usize,
        index: usize,
        codewords: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("degenerate direction: codeword coincides with the representation")]
    DegenerateDirection,

    #[error("label {label} has a single sample; triplets need at least two per class")]
    DegenerateLabel { label: i32 },

    #[error("label count {labels} does not match row count {rows}")]
    LabelMismatch { labels: usize, rows: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
