//! Adam with bias correction, and cosine learning-rate annealing.

use fmce_autograd::Scalar;
use indexmap::IndexMap;

use crate::error::{FmceError, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Moment estimates for every trainable parameter, keyed by name.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    cfg: AdamConfig,
    step: u64,
    moments: IndexMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable parameter. Frozen
    /// parameters are skipped; a trainable one without gradient is an error.
    pub fn step(&mut self, params: &mut ParamSet<T>, lr: f64) -> Result<()> {
        for (name, p) in params.iter() {
            if p.tensor.requires_grad() && p.tensor.grad().is_none() {
                return Err(FmceError::MissingGradient(name.to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.cfg.beta1), T::of(self.cfg.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.cfg.beta1), T::of(1.0 - self.cfg.beta2));
        let c1 = T::of(1.0 - self.cfg.beta1.powi(t));
        let c2 = T::of(1.0 - self.cfg.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(self.cfg.eps));
        for (name, p) in params.iter_mut() {
            if !p.tensor.requires_grad() {
                continue;
            }
            let n = p.tensor.numel();
            let mom = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments {
                    m: vec![T::zero(); n],
                    v: vec![T::zero(); n],
                });
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let values = p.tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                mom.m[i] = b1 * mom.m[i] + one_b1 * g;
                mom.v[i] = b2 * mom.v[i] + one_b2 * g * g;
                let m_hat = mom.m[i] / c1;
                let v_hat = mom.v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `max` at epoch 0 to `min` at the last epoch of the budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub max: f64,
    pub min: f64,
    pub epochs: usize,
}

impl CosineSchedule {
    pub fn new(max: f64, min: f64, epochs: usize) -> Result<Self> {
        if epochs == 0 || !(max > 0.0) || !(min >= 0.0) || min > max {
            return Err(FmceError::Config(format!(
                "invalid schedule: lr {max} → {min} over {epochs} epochs"
            )));
        }
        Ok(CosineSchedule { max, min, epochs })
    }

    /// Learning rate for 0-based `epoch`; clamps past the budget.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs == 1 {
            return self.max;
        }
        let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.min + 0.5 * (self.max - self.min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Partition;
    use fmce_autograd::Tensor;

    #[test]
    fn first_adam_step_is_about_lr() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("w", Partition::Backbone, Tensor::scalar(0.0)).unwrap();
        ps.get_mut("w").unwrap().tensor.accumulate_grad(&[1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut ps, 1e-3).unwrap();
        let w = ps.get("w").unwrap().tensor.item();
        assert!((w + 1e-3).abs() < 1e-10, "{w}");
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("w", Partition::Backbone, Tensor::full([3], 0.25).unwrap()).unwrap();
        ps.get_mut("w").unwrap().tensor.accumulate_grad(&[0.0; 3]).unwrap();
        let before = ps.checksum(None);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut ps, 1e-3).unwrap();
        assert_eq!(before, ps.checksum(None));
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("w", Partition::Backbone, Tensor::full([3], 0.25).unwrap()).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut ps, 1e-3), Err(FmceError::MissingGradient(n)) if n == "w"));
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = CosineSchedule::new(1e-3, 1e-5, 31).unwrap();
        assert_eq!(s.lr_at(0), 1e-3);
        assert!((s.lr_at(30) - 1e-5).abs() < 1e-18);
        assert!((s.lr_at(15) - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert!(CosineSchedule::new(1e-3, 1e-2, 5).is_err());
    }
}
