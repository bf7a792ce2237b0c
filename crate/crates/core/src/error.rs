use thiserror::Error;

use crate::arch::ValidityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty logits")]
    EmptyLogits,

    #[error("backward already ran on this record; reset before reuse")]
    BackwardConsumed,

    #[error("learning rate must be positive, got {0}")]
    NonPositiveLearningRate(f64),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(ValidityReport),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("label out of range [0, 1]: {0}")]
    LabelOutOfRange(f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("could not collect {wanted} unique architectures after {attempts} draws")]
    SearchSpaceExhausted { wanted: usize, attempts: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
