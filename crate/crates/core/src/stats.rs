//! Mean and sample standard deviation over per-seed results.

use crate::error::{FmceError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub std: f64,
    /// Set when only one value was given, so `std` carries no information.
    pub single: bool,
}

impl RunStats {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(FmceError::Config("statistics need at least one value".into()));
        }
        // Welford's update
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (i, &x) in values.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let n = values.len();
        let std = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
        Ok(RunStats {
            values: values.to_vec(),
            mean,
            std,
            single: n == 1,
        })
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }
}
