use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0} (must be at least 1)")]
    InvalidDimension(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: u64 },

    #[error("{context} diverged at iteration {iteration} (norm {norm:e})")]
    Divergence {
        context: &'static str,
        iteration: u64,
        norm: f64,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("invalid problem construction: {0}")]
    Construction(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for the numeric failure modes a solver run can hit mid-flight.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergence { .. })
    }
}
