use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Two independent evaluations of the same quantity disagree. Always a bug.
    #[error("internal inconsistency: {0}")]
    Inconsistency(String),

    #[error("no decoding progress after {segments} segments")]
    NoProgress { segments: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
