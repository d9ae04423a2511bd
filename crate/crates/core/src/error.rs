use alloc::string::String;

/// Errors returned by loss construction, parameter derivation and the optimizers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A hypothesis required by a parameter derivation does not hold.
    /// The message lists every failed bound.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sample {index} has norm {norm} above the declared bound {bound}")]
    NormBound { index: usize, norm: f64, bound: f64 },

    #[error("data stream exhausted: requested {requested}, {remaining} remaining")]
    StreamExhausted { requested: usize, remaining: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
