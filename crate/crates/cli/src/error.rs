use std::path::PathBuf;

use hgnn::HgnnError;
use hgnn_autodiff::AdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at step {step} (loss {loss}); last good checkpoint: {}", checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string()))]
    Diverged {
        step: u64,
        loss: f64,
        checkpoint: Option<PathBuf>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] HgnnError),

    #[error(transparent)]
    Autodiff(#[from] AdError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

impl HarnessError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
