use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel order {q}: {reason}")]
    InvalidOrder { q: f64, reason: &'static str },

    #[error("series of order {q} diverges at u = {u}")]
    DivergentPoint { q: f64, u: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("model kernel order {model} does not match problem order {problem}")]
    OrderMismatch { model: f64, problem: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("run failed at n = {n}, replication {rep}: {source}")]
    Run {
        n: usize,
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
