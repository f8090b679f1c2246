use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("triangle {triangle} is degenerate (area {area:e} mm^2)")]
    DegenerateTriangle { triangle: usize, area: f64 },
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("weight vector has length {actual}, expected {expected}")]
    WeightDimensionMismatch { expected: usize, actual: usize },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("standardization spec out of range: {0}")]
    SpecOutOfRange(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
