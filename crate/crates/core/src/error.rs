use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("argument {value} is outside the domain of {function}")]
    Domain { function: &'static str, value: f64 },

    #[error("{0} must be finite")]
    NonFinite(&'static str),

    #[error("KL divergence {0} is negative beyond roundoff")]
    NegativeKl(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("normalizer is zero: the first {warmup} stability radii are all zero")]
    DegenerateNormalizer { warmup: usize },

    #[error("stopping controller has already stopped")]
    AlreadyStopped,

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("correlation is undefined for a constant sequence")]
    UndefinedCorrelation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
