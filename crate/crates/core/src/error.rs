use thiserror::Error;

/// Errors produced by the mcflow library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid lattice parameters: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown element `{0}`")]
    UnknownElement(String),

    #[error("canonicalization failed: {0}")]
    Canonicalization(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("prior sampling failed: {0}")]
    PriorSampling(String),

    #[error("integration failed at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error("non-finite training loss at step {step} (records {ids:?}, t = {times:?})")]
    NonFiniteLoss {
        step: usize,
        ids: Vec<String>,
        times: Vec<f64>,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("id mismatch: {0:?}")]
    IdMismatch(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
