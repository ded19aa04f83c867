//! Classification, FMCS and blended losses.
//!
//! All losses use mean reduction over the mini-batch.

use fmce_autograd::{Scalar, Tape, Tensor, Var};

use crate::error::{FmceError, Result};

/// Blend weight between the classification loss and the FMCS loss.
///
/// The blend is `α·L_base + (1−α)·L_FMCS`: `α = 1` is the pure
/// classification baseline and `α = 0` trains on the FMCS loss alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RalConfig {
    alpha: f64,
}

impl RalConfig {
    pub const CONVENTION: &'static str = "L = alpha*L_base + (1-alpha)*L_FMCS; alpha=1 is the pure classification baseline, alpha=0 the pure FMCS loss";

    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(FmceError::Config(format!("RAF alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(RalConfig { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

fn check_width<T: Scalar>(tape: &Tape<T>, logits: Var, target: &Tensor<T>, what: &str) -> Result<()> {
    let l = tape.shape(logits).dims();
    let t = target.dims();
    if l.len() != 2 || t.len() != 2 || l != t {
        return Err(FmceError::Spec(format!(
            "{what}: logits {} and one-hot targets {} differ",
            tape.shape(logits),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of `N×C` class logits against one-hot labels.
pub fn loss_base<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &Tensor<T>) -> Result<Var> {
    check_width(tape, logits, labels, "classification loss")?;
    Ok(tape.cross_entropy_from_logits(logits, labels)?)
}

/// Mean cross-entropy of `N×K` FMCS logits against one-hot checkpoint labels.
pub fn loss_fmce_train<T: Scalar>(tape: &mut Tape<T>, q_logits: Var, s_labels: &Tensor<T>) -> Result<Var> {
    check_width(tape, q_logits, s_labels, "FMCE-Net loss")?;
    Ok(tape.cross_entropy_from_logits(q_logits, s_labels)?)
}

/// `−(1/N)·Σ_i log q̂_iK`: every feature map is pushed towards the
/// fully-converged level K.
pub fn loss_fmcs<T: Scalar>(tape: &mut Tape<T>, q_logits: Var) -> Result<Var> {
    let dims = tape.shape(q_logits).dims().to_vec();
    if dims.len() != 2 {
        return Err(FmceError::Spec(format!(
            "FMCS loss expects N×K logits, got {}",
            tape.shape(q_logits)
        )));
    }
    let (n, k) = (dims[0], dims[1]);
    let logp = tape.log_softmax(q_logits)?;
    let mut mask = vec![T::zero(); n * k];
    for row in mask.chunks_mut(k) {
        row[k - 1] = T::one();
    }
    let mask = tape.constant(Tensor::from_vec([n, k], mask)?);
    let picked = tape.mul(logp, mask)?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, T::of(-1.0 / n as f64))?)
}

/// `α·l_base + (1−α)·l_fmcs` on the tape.
pub fn loss_ral<T: Scalar>(tape: &mut Tape<T>, l_base: Var, l_fmcs: Var, cfg: RalConfig) -> Result<Var> {
    let a = tape.scale(l_base, T::of(cfg.alpha))?;
    let b = tape.scale(l_fmcs, T::of(1.0 - cfg.alpha))?;
    Ok(tape.add(a, b)?)
}

/// Scalar form of [`loss_ral`], evaluated the same way.
pub fn ral_value(l_base: f64, l_fmcs: f64, cfg: RalConfig) -> f64 {
    cfg.alpha * l_base + (1.0 - cfg.alpha) * l_fmcs
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], width: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * width];
    for (row, &l) in labels.iter().enumerate() {
        if l >= width {
            return Err(FmceError::Spec(format!("label {l} out of range for width {width}")));
        }
        data[row * width + l] = T::one();
    }
    Ok(Tensor::from_vec([labels.len(), width], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_range_enforced() {
        assert!(RalConfig::new(-0.01).is_err());
        assert!(RalConfig::new(1.01).is_err());
        assert!(RalConfig::new(f64::NAN).is_err());
        assert!(RalConfig::new(0.0).is_ok() && RalConfig::new(1.0).is_ok());
    }

    #[test]
    fn blend_arithmetic() {
        let cfg = RalConfig::new(0.5).unwrap();
        assert_eq!(ral_value(2.0, 4.0, cfg), 3.0);
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::scalar(2.0));
        let b = tape.constant(Tensor::scalar(4.0));
        let l = loss_ral(&mut tape, a, b, cfg).unwrap();
        assert_eq!(tape.value(l).item(), 3.0);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros([2, 3]).unwrap());
        let labels = one_hot::<f64>(&[0, 1], 4).unwrap();
        assert!(matches!(loss_base(&mut tape, logits, &labels), Err(FmceError::Spec(_))));
    }
}
