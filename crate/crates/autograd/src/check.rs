//! Central finite-difference gradient checks.
//!
//! The numerical side only ever evaluates forward values, so it shares no code
//! with the backward rules it verifies.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Comparison of analytic and numerical gradients for one input tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradComparison {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs_err: f64,
    /// `max |a - n| / max(max |a|, max |n|)`, with the denominator floored at 1e-6.
    pub rel_err: f64,
}

/// `∂f/∂inputs[which]` by central differences with step `h`.
pub fn numerical_gradient<F>(inputs: &[Tensor<f64>], which: usize, h: f64, f: F) -> Vec<f64>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let n = work[which].numel();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + h;
        let plus = f(&work);
        work[which].data_mut()[i] = orig - h;
        let minus = f(&work);
        work[which].data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Evaluates `build` on a fresh tape with every input as a gradient leaf,
/// backpropagates, and compares each input's gradient against central differences.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<Vec<GradComparison>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;

    let forward = |ts: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = ts.iter().map(|x| t.constant(x.clone())).collect();
        let o = build(&mut t, &vs).expect("forward succeeded once already");
        t.value(o).item()
    };

    let mut report = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let numeric = numerical_gradient(inputs, i, h, forward);
        report.push(compare(analytic, numeric));
    }
    Ok(report)
}

pub fn compare(analytic: Vec<f64>, numeric: Vec<f64>) -> GradComparison {
    let max_abs_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(&numeric)
        .map(|v| v.abs())
        .fold(1e-6, f64::max);
    GradComparison {
        analytic,
        numeric,
        max_abs_err,
        rel_err: max_abs_err / scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_gradient_of_square() {
        let x = Tensor::from_vec([2], vec![1.5, -2.0]).unwrap();
        let g = numerical_gradient(&[x], 0, 1e-4, |t| t[0].data().iter().map(|v| v * v).sum());
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] + 4.0).abs() < 1e-8);
    }
}
