//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates its documented range or form.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// An input is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Too few samples for a statistical procedure.
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Samples carry no usable signal (for example zero variance).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A vector or matrix has the wrong dimension for this model.
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    /// A text input failed to parse; `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A binary checkpoint is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// The per-class calibration bank could not be constructed.
    #[error("bank construction failed: {0}")]
    BankConstruction(String),

    /// A backward pass was asked for gradients that the forward pass
    /// did not cache.
    #[error("missing cache: {0}")]
    MissingCache(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
