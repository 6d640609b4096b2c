use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}: {msg}")]
    Data { path: PathBuf, row: usize, msg: String },

    #[error("{path}: no rows")]
    EmptyData { path: PathBuf },

    #[error("insufficient samples in class {class_id}: {msg}")]
    InsufficientSamples { class_id: u32, msg: String },

    #[error("enumeration of {count} elements exceeds the limit of {limit}; {hint}")]
    EnumerationLimit { count: u128, limit: usize, hint: String },

    #[error("missing checkpoint for strategy `{0}`")]
    MissingCheckpoint(String),

    #[error("parameter container: {0}")]
    Container(String),

    #[error("class {class_id} is outside the {stage} universe")]
    AccessViolation { class_id: u32, stage: String },

    #[error("parameters are frozen")]
    Frozen,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
