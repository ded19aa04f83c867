//! Training engine for convergence-aware auxiliary supervision.
//!
//! A small convolutional backbone is trained on an image task while snapshots
//! are taken along its loss curve. Feature maps from those snapshots form the
//! FMCS dataset, on which a lightweight scorer (FMCE-Net) learns to tell how
//! converged a feature map is. The frozen scorer is then attached as an
//! auxiliary head, and its loss, blended with the classification loss by the
//! factor α, drives further backbone training.

mod binio;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fmcs;
pub mod gradcam;
pub mod losses;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod stats;
pub mod train;

pub use error::{FmceError, Result};
pub use params::{Bindings, Param, ParamSet, Partition};
