use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cell ({x}, {y}) is outside the area of interest")]
    OutOfBounds { x: i32, y: i32 },
    #[error("transmitter at ({x:.1}, {y:.1}, {z:.1}) is inside a building")]
    TransmitterIndoor { x: f64, y: f64, z: f64 },
    #[error("covariance matrix is not positive definite (jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("state space budget exceeded: {states} states > {budget}")]
    BudgetExceeded { states: usize, budget: usize },
    #[error("no legal action from a reachable swarm state at step {step}")]
    Blocked { step: usize },
    #[error("measurement log is empty")]
    EmptyLog,
    #[error("evaluation mask selects no cells")]
    EmptyMask,
    #[error("zero predicted variance at masked cell {0}")]
    ZeroVariance(usize),
    #[error("no legal cell at UAV altitude")]
    NoLegalCells,
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed artifact: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
