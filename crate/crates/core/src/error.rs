use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("index sets overlap at coordinate {index}")]
    Overlap { index: usize },
    #[error("index set not strictly increasing at position {position}")]
    UnsortedIndex { position: usize },
    #[error("matrix not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix not positive semidefinite (eigenvalues in [{min_eig:e}, {max_eig:e}])")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("matrix singular beyond jitter escalation (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("{quantity} evaluated to {value:e}, below the clamp tolerance")]
    Consistency { quantity: &'static str, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("causality violation: reference frame {frame} is not in the past 1..={limit}")]
    Causality { frame: usize, limit: usize },
    #[error("missing coordinate for frame {frame} at level {level}")]
    MissingCoordinate { frame: usize, level: String },
    #[error("config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by unreadable or malformed input rather than by the
    /// mathematics of a well-formed request.
    pub fn is_input_failure(&self) -> bool {
        matches!(self, Error::Parse(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
