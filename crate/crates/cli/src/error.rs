use std::path::{Path, PathBuf};

use fmce_core::FmceError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] FmceError),

    #[error("{path} not found; run `fmce-lab {producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, LabError>;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

impl LabError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 3 file format, 4 divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::MissingArtifact { .. } => EXIT_CONFIG,
            LabError::Core(e) => match e {
                FmceError::Config(_) | FmceError::Spec(_) | FmceError::UnknownPartition(_) => EXIT_CONFIG,
                FmceError::Format { .. } => EXIT_FORMAT,
                FmceError::Divergence { .. } => EXIT_DIVERGENCE,
                _ => EXIT_OTHER,
            },
            LabError::Io { .. } => EXIT_OTHER,
        }
    }
}
