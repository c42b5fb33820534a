//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("bad IDX file {path}: {reason}")]
    IdxFormat { path: String, reason: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} has {available} usable samples, need at least {needed}")]
    TooFewSamples {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("weibull fit: {0}")]
    WeibullFit(String),

    #[error("weibull fit: tail values are all equal")]
    DegenerateTail,

    #[error("openmax fit for class {class}: {reason}")]
    OpenmaxFit { class: usize, reason: String },

    #[error("openmax head is not fitted")]
    NotFitted,

    #[error("confusion matrix has no populated rows")]
    EmptyMatrix,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
