use std::path::{Path, PathBuf};

use fmce_autograd::AutogradError;

#[derive(Debug, thiserror::Error)]
pub enum FmceError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{origin}: malformed file: {reason}")]
    Format { origin: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model specification: {0}")]
    Spec(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown partition `{0}`")]
    UnknownPartition(String),

    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, FmceError>;

impl FmceError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        FmceError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(origin: impl std::fmt::Display, reason: impl Into<String>) -> Self {
        FmceError::Format {
            origin: origin.to_string(),
            reason: reason.into(),
        }
    }
}
