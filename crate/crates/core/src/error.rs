use thiserror::Error;

/// Errors surfaced by the synthesis and kernel layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The circulant embedding of the covariance has an eigenvalue more
    /// negative than the clamping tolerance allows.
    #[error("circulant embedding failed: most negative eigenvalue {min_eigenvalue:e}")]
    Embedding { min_eigenvalue: f64 },

    /// The request exceeds a hard resource budget.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn capacity(msg: impl Into<String>) -> Self {
        Error::Capacity(msg.into())
    }
}
