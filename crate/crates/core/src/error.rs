use thiserror::Error;

/// Errors raised by kpz-core operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpzError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("heat kernel at zero time is a point mass at {at}")]
    DeltaKernel { at: f64 },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("memory budget exceeded: {needed} values requested, budget {budget}")]
    MemoryBudget { needed: usize, budget: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("kappa too large: weighted kernel tail {tail:e} at the truncation edge")]
    KappaTooLarge { tail: f64 },
    #[error("rejection sampler gave up after {attempts} attempts")]
    AcceptanceTooLow { attempts: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, KpzError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(KpzError::InvalidArgument(msg.into()))
}
