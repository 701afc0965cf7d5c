use thiserror::Error;

/// Errors raised across the optimization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("component {component} = {value} lies outside [{lower}, {upper}]")]
    Domain {
        component: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite evaluation at x = {x:?}")]
    Evaluation { x: Vec<f64> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("surrogate fit failed: {0}")]
    Fit(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("chain error: {0}")]
    Chain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
