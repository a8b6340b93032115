use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DinaError {
    #[error("operation not supported for family {family}: {reason}")]
    UnsupportedFamily { family: String, reason: String },

    #[error("invalid response value {value} at row {row} for family {family}")]
    InvalidResponse { row: usize, value: f64, family: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("likelihood is unbounded (separation): coefficient norm {norm:.3e} exceeded cap")]
    Separation { norm: f64 },

    #[error("solver did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },

    #[error("partial likelihood requires at least one event")]
    NoEvents,

    #[error("treatment has a single observed class ({0})")]
    SingleClass(usize),

    #[error("arm {arm} has no rows")]
    EmptyArm { arm: usize },

    #[error("quadrature did not reach tolerance {tol:.1e} (estimated error {err:.3e})")]
    Quadrature { tol: f64, err: f64 },

    #[error("censoring target {target} unreachable: {reason}")]
    CalibrationFailed { target: f64, reason: String },

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<DinaError>,
    },

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: String, message: String },

    #[error("missing column {0}")]
    MissingColumn(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DinaError {
    fn from(e: std::io::Error) -> Self {
        DinaError::Io(e.to_string())
    }
}

impl From<csv::Error> for DinaError {
    fn from(e: csv::Error) -> Self {
        DinaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DinaError>;
