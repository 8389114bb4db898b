use thiserror::Error;

/// Errors raised by the completion library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{family}: natural parameter {x} outside the admissible domain")]
    Domain { family: &'static str, x: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("sampling scheme gives entry ({row}, {col}) zero probability")]
    ZeroProbability { row: usize, col: usize },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("missing constant `{0}` for bound evaluation")]
    MissingConstant(&'static str),

    #[error("not applicable: {0}")]
    Inapplicable(String),

    #[error("packing reached {achieved} members, target was {target}")]
    PackingIncomplete { achieved: usize, target: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
