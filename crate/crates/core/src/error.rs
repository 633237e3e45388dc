use thiserror::Error;

/// Errors raised by the pipeline, optimizer and environment code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite fitness {value} for candidate {index}")]
    NonFiniteFitness { index: usize, value: f64 },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("missing fitness for representative {0}")]
    MissingFitness(usize),

    #[error("environment fault: {0}")]
    Environment(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
