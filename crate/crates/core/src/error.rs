use thiserror::Error;

/// Errors raised while validating inputs or running a computation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("invalid chain specification: {0}")]
    InvalidSpec(String),
    #[error("generator is reducible: {0}")]
    NotErgodic(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("linear solve failed: {0}")]
    SolveFailed(String),
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid weight request: {0}")]
    InvalidWeightRequest(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by bad user input, as opposed to numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::SolveFailed(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
