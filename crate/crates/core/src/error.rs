use thiserror::Error;

use crate::hyperopt::HyperParamVector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parameter index {index} is not defined for the {family} family")]
    UnknownParameter { family: &'static str, index: usize },

    /// Covariance stayed indefinite after the full jitter ladder.
    #[error("covariance matrix is not positive definite (jitter escalated up to {max_jitter:e}); increase the noise variance or the jitter")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("hyperparameter optimization failed: {message}")]
    Optimization {
        message: String,
        best: Box<HyperParamVector>,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure is numerical (as opposed to configuration or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Singular(_)
                | Error::Degenerate(_)
                | Error::Optimization { .. }
        )
    }
}
