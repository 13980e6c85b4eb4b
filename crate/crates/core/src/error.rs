use thiserror::Error;

pub type Result<T> = std::result::Result<T, ZidmError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZidmError {
    /// A distribution or hyperparameter was given a value outside its support.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A latent-state invariant was broken. Reaching this is a bug.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ZidmError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        ZidmError::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        ZidmError::Shape(msg.into())
    }
}
