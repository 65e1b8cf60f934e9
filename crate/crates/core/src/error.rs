use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("point ({x}, {y}) does not lie on the {boundary} boundary")]
    OffBoundary { x: f64, y: f64, boundary: String },

    #[error("loss term `{0}` is enabled but has no points")]
    EmptyTerm(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("iteration did not converge: {0}")]
    NotConverged(String),

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("reference field has zero norm")]
    ZeroReference,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
