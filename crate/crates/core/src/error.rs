use std::path::PathBuf;

use hgnn_autodiff::AdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HgnnError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("graph encoding failed: {0}")]
    Encoding(String),

    #[error("dataset format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl HgnnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HgnnError>;
