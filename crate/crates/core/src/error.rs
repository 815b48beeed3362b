/// Errors produced by the loss and fusion kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    /// Input violates an operation precondition (non-finite, empty, out of range).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Parameters outside the domain of a closed-form expression.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector or matrix shapes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        CoreError::InvalidInput(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }

    pub fn dimension_mismatch(msg: impl Into<String>) -> Self {
        CoreError::DimensionMismatch(msg.into())
    }
}
