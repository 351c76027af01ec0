use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("matrix {what} is not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { what: &'static str, jitter: f64 },

    #[error("layer {layer} out of range (model has {layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("shard partition invalid: {0}")]
    Partition(String),

    #[error("data error at row {row}, column {col}: {reason}")]
    Data {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
