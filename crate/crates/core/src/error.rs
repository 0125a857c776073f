use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:.3e})"
    )]
    NotConverged { iterations: usize, residual: f64 },

    #[error("iteration diverged at step {step} (residual {residual:.3e})")]
    Diverged {
        step: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("empty tank mask")]
    EmptyMask,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
