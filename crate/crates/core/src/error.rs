use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty sample set")]
    EmptySampleSet,

    #[error("unequal support sizes: {0} vs {1}")]
    UnequalSupport(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("assignment too large: {size} points exceeds the cap of {cap}")]
    AssignmentTooLarge { size: usize, cap: usize },

    #[error("already mollified")]
    AlreadyMollified,

    #[error("log of nonpositive value {0}")]
    LogOfNonpositive(f64),

    #[error("2β+α>2 violated: (H2) drift regularity needs 2*beta + alpha > 2 (beta = {beta}, alpha = {alpha})")]
    HolderCondition { alpha: f64, beta: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid study grid: {0}")]
    InvalidGrid(String),

    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
