use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A rate function or Lévy measure is malformed or violates a structural hypothesis.
    #[error("specification error: {0}")]
    Spec(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A certificate required by the operation is missing or negative.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The scheme produced a non-finite state.
    #[error("numerical overflow; last valid state {last_state}")]
    Overflow { last_state: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn spec<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Spec(msg.into()))
}
