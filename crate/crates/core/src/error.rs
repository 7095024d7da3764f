use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("{op}: input outside the function domain ({msg})")]
    Domain { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward was already run from node {0}; higher-order or repeated backward is not supported")]
    DoubleBackward(usize),

    #[error("feature index {index} at field position {field} is outside the vocabulary (size {vocab})")]
    OutOfVocabulary {
        field: usize,
        index: usize,
        vocab: usize,
    },

    #[error("{0}")]
    Config(String),

    #[error("gradient vectors have mismatched lengths: core has {core}, task {task} has {len}")]
    GradientLength { core: usize, task: usize, len: usize },

    #[error("metric {metric}: {msg}")]
    Metric { metric: &'static str, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("sequential label constraint y1 >= y2 >= ... violated on data rows {rows:?}")]
    LabelConstraint { rows: Vec<usize> },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown variant `{name}`; valid variants: {valid}")]
    UnknownVariant { name: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
