use thiserror::Error;

/// Errors raised across the toolkit. Variants follow the failure classes
/// callers are expected to distinguish (bad input vs. misuse vs. numeric
/// failure vs. infeasible budget).
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("search failed at epoch {epoch}: {reason}")]
    Search { epoch: usize, reason: String },

    #[error("policy error: {0}")]
    Policy(String),

    #[error("infeasible budget: {0}")]
    Infeasible(String),

    #[error("search space too large: {cardinality} architectures exceeds cap {cap}")]
    SpaceTooLarge { cardinality: u128, cap: u128 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
