use thiserror::Error;

/// Errors raised while loading models, validating inputs, or running the solver.
#[derive(Debug, Error)]
pub enum Error {
    /// The `.dpomdp` text could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The model tables are structurally or numerically invalid.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A controller does not fit the model or is not stochastic.
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    /// A numerical failure (NaN/Inf or an unrecoverable zero normalizer).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
