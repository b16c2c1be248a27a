use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample count mismatch: {left} vs {right} (the paired form needs equal sizes)")]
    SampleCountMismatch { left: usize, right: usize },

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("all rows are identical; median heuristic bandwidth would be zero")]
    DegenerateBandwidth,

    #[error("matrix is numerically singular (smallest eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },

    #[error("matrix is not symmetric (entry ({row}, {col}) differs from its transpose)")]
    Asymmetric { row: usize, col: usize },

    #[error("root search failed: {0}")]
    RootNotFound(String),

    #[error("classical Gaussian mechanism requires epsilon in (0, 1), got {0}; use the analytic mechanism instead")]
    ClassicalEpsilonRange(f64),

    #[error("{path}: line {line}: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
