use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid manifold: {0}")]
    InvalidManifold(String),

    #[error("graph is disconnected: vertices {unreachable:?} unreachable from vertex {source_vertex}")]
    Disconnected {
        source_vertex: usize,
        unreachable: Vec<usize>,
    },

    #[error("vertex index {index} out of range for {n} vertices")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid observation set: {0}")]
    InvalidObservationSet(String),

    #[error("eigensolver residual {residual:e} exceeds tolerance {tolerance:e}")]
    EigenSolver { residual: f64, tolerance: f64 },

    #[error("input has nonzero mean {mean:e} (tolerance {tolerance:e})")]
    NonzeroMean { mean: f64, tolerance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time step {dt} violates the stability limit {limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("rank deficient system: {0}")]
    RankDeficient(String),

    #[error("source not admissible: {0}")]
    NotAdmissible(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("not a graph automorphism: {0}")]
    NotAutomorphism(String),

    #[error("exponential fit failed: {0}")]
    Fit(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
