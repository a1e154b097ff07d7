//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset loading, graph extraction, model
/// construction, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    #[error("estimator {method} failed: {msg}")]
    Estimator { method: String, msg: String },

    #[error("all graph estimators failed")]
    AllEstimatorsFailed,

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for a shape-mismatch error naming the offending op.
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }
}
