use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation (non-positive distance, noise power, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A STAR-RIS or precoder constraint does not hold.
    #[error("constraint violated at element {index}: {message}")]
    Constraint { index: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The optimizer produced a non-finite objective. `trace` holds the objective history.
    #[error("numerical failure: {message} (after {} recorded steps)", trace.len())]
    Numerical { message: String, trace: Vec<f64> },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("pipeline stage `{stage}`: {message}")]
    Pipeline { stage: &'static str, message: String },

    #[error("search grid too large: {size} candidates exceeds the limit of {limit}")]
    GridTooLarge { size: u128, limit: u128 },

    #[error("config error: {0}")]
    Config(String),

    #[error("config hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("malformed container {path:?}: {message}")]
    Format { path: Option<PathBuf>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Constraint { .. } => "constraint",
            Error::Dimension(_) => "dimension",
            Error::Numerical { .. } => "numerical",
            Error::Data(_) => "data",
            Error::Pipeline { .. } => "pipeline",
            Error::GridTooLarge { .. } => "grid-too-large",
            Error::Config(_) => "config",
            Error::HashMismatch { .. } => "hash-mismatch",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format { path: None, message: message.into() }
    }
}
