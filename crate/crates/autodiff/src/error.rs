use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range for extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite value produced by `{op}` (tape node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AdError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(AdError::Shape {
        op,
        detail: detail.into(),
    })
}
