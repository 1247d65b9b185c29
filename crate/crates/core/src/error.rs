use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{oracle} oracle produced a non-finite value")]
    NonFinite { oracle: &'static str },

    #[error("weights must form a probability vector (sum = {sum})")]
    InvalidWeights { sum: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("sample stream exhausted after {drawn} draws")]
    StreamExhausted { drawn: usize },

    #[error("iteration budget T = {t} is below the admissible threshold (need T > {threshold:.3}, i.e. T >= {minimal})")]
    BelowThreshold { t: usize, threshold: f64, minimal: usize },

    #[error("instance is infeasible")]
    Infeasible,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column `{column}` at row {row}")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("empty input file")]
    EmptyFile,

    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {}: {}", i.field, i.reason)).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One field-level configuration problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub reason: String,
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
