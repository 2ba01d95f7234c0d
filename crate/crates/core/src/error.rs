use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter or configuration value violates a type invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A numerical routine failed to converge or produced non-finite values.
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        last_estimate: Option<f64>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, last_estimate: Option<f64>) -> Self {
        Error::Numerical {
            message: msg.into(),
            last_estimate,
        }
    }
}
