use thiserror::Error;

/// Errors produced by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("elemental density {value} at element {element} is non-positive")]
    CorruptedDensity { element: usize, value: f64 },

    #[error("box QP iteration cap ({0}) exceeded")]
    QpIterationCap(usize),

    #[error("operation requires a mechanism problem (output functional missing)")]
    NotMechanism,

    #[error("operation requires a compliance problem (strain energies must be non-negative)")]
    NotCompliance,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
