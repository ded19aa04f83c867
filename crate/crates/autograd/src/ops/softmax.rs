use crate::error::{invalid, AutogradError, Result};
use crate::scalar::Scalar;
use crate::tape::{accumulate, Node, Op, Tape, Var};
use crate::tensor::Tensor;

/// Row-wise `x - max - ln Σ exp(x - max)`.
fn log_softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - max - lse));
    }
    out
}

fn matrix_dims<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var) -> Result<(usize, usize)> {
    let s = tape.shape(a);
    if s.rank() != 2 {
        return Err(invalid(op, format!("expected N×C logits, got {s}")));
    }
    Ok((s.dims()[0], s.dims()[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        self.check(logits)?;
        let (rows, cols) = matrix_dims(self, "log_softmax", logits)?;
        let out = log_softmax_rows(self.data(logits), cols);
        let out = Tensor::from_vec([rows, cols], out)?;
        Ok(self.push(out, Op::LogSoftmax(logits)))
    }

    /// Mean over rows of `-Σ_c y_c log softmax(x)_c` for one-hot targets `y`.
    pub fn cross_entropy_from_logits(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        self.check(logits)?;
        let (rows, cols) = matrix_dims(self, "cross_entropy", logits)?;
        if target.shape() != self.shape(logits) {
            return Err(AutogradError::ShapeMismatch {
                op: "cross_entropy",
                lhs: self.shape(logits).clone(),
                rhs: target.shape().clone(),
            });
        }
        for (row, t) in target.data().chunks_exact(cols).enumerate() {
            let ones = t.iter().filter(|&&v| v == T::one()).count();
            let zeros = t.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || ones + zeros != cols {
                return Err(AutogradError::NotOneHot { row });
            }
        }
        let logp = log_softmax_rows(self.data(logits), cols);
        let total: T = logp
            .iter()
            .zip(target.data())
            .filter(|(_, &t)| t != T::zero())
            .map(|(&lp, &t)| -t * lp)
            .sum();
        let loss = total / T::of(rows as f64);
        let probs = logp.iter().map(|&v| v.exp()).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                target: target.data().to_vec(),
                rows,
            },
        ))
    }
}

pub(super) fn log_softmax_backward<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    a: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let y = nodes[id].value.data();
    let cols = nodes[id].value.dims()[1];
    accumulate(adj, a, g.len(), |s| {
        for ((ds, gs), ys) in s
            .chunks_exact_mut(cols)
            .zip(g.chunks_exact(cols))
            .zip(y.chunks_exact(cols))
        {
            let total: T = gs.iter().copied().sum();
            for ((d, &gi), &yi) in ds.iter_mut().zip(gs).zip(ys) {
                *d += gi - yi.exp() * total;
            }
        }
    });
}

pub(super) fn cross_entropy_backward<T: Scalar>(
    nodes: &[Node<T>],
    logits: Var,
    probs: &[T],
    target: &[T],
    rows: usize,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if !nodes[logits.0].needs_grad {
        return;
    }
    let k = g[0] / T::of(rows as f64);
    accumulate(adj, logits, probs.len(), |s| {
        for ((d, &p), &t) in s.iter_mut().zip(probs).zip(target) {
            *d += (p - t) * k;
        }
    });
}
