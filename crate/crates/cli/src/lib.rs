//! Stages and configuration behind the `fmce-lab` command.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{DatasetKind, ExperimentConfig, Overrides};
pub use error::{LabError, Result};
