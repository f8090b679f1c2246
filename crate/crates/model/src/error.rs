use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] facrig_core::Error),
    #[error("nothing to render: {0}")]
    EmptyRender(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("mesh operators missing: {0}")]
    MissingOperators(String),
    #[error("labeled sample {0} has no AU weights")]
    MissingLabel(usize),
    #[error("dataset is empty: {0}")]
    DatasetEmpty(String),
    #[error("unknown configuration {0:?}")]
    UnknownConfig(String),
    #[error("meshes do not correspond: {0}")]
    CorrespondenceMismatch(String),
    #[error("frame sets do not match: {0}")]
    FrameMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
