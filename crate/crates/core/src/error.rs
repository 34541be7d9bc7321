use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {block}: expected {expected}, got {got}")]
    DimensionMismatch {
        block: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite parameter in {block}")]
    NonFiniteParameter { block: &'static str },

    #[error("log-likelihood is not finite (probability underflow at subject {subject})")]
    NonFiniteLikelihood { subject: usize },

    #[error("invalid logistic problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed csv at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
