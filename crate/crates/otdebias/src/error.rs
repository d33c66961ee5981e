//! Error taxonomy shared across the crate.
//!
//! The CLI maps these onto exit codes: data-shaped failures (bad input,
//! malformed files, degenerate configurations) exit 1, usage errors exit 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents, sequence lengths, or binnings do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value is outside its admissible range.
    #[error("parameter error: {0}")]
    Param(String),

    /// Input data violates a contract (empty input, NaN, non-normalized mass).
    #[error("data error: {0}")]
    Data(String),

    /// A catalog file is missing a mandatory column or has a bad header.
    #[error("schema error: {0}")]
    Schema(String),

    /// Selection function rejected essentially everything.
    #[error("degenerate selection: {0}")]
    DegenerateSelection(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
