use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tape::{accumulate, Node, Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Max pooling over `window×window` patches with the given stride, no padding.
    ///
    /// The gradient goes to the first maximal element in row-major scan order.
    pub fn maxpool2d(&mut self, a: Var, window: usize, stride: usize) -> Result<Var> {
        self.check(a)?;
        let dims = self.shape(a).dims().to_vec();
        if dims.len() != 4 {
            return Err(invalid("maxpool2d", format!("expected N×C×H×W, got {}", self.shape(a))));
        }
        if window == 0 || stride == 0 {
            return Err(invalid("maxpool2d", "window and stride must be positive"));
        }
        let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        if window > h || window > w {
            return Err(invalid(
                "maxpool2d",
                format!("window {window} exceeds spatial extent {h}×{w}"),
            ));
        }
        let (ho, wo) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let x = self.data(a);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..window {
                        for kx in 0..window {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_vec([n, c, ho, wo], out)?;
        Ok(self.push(out, Op::MaxPool2d { input: a, argmax }))
    }

    /// Spatial mean, `N×C×H×W → N×C`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let dims = self.shape(a).dims().to_vec();
        if dims.len() != 4 {
            return Err(invalid(
                "global_avg_pool",
                format!("expected N×C×H×W, got {}", self.shape(a)),
            ));
        }
        let area = dims[2] * dims[3];
        let inv = T::of(1.0 / area as f64);
        let out: Vec<T> = self
            .data(a)
            .chunks_exact(area)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec([dims[0], dims[1]], out)?;
        Ok(self.push(out, Op::GlobalAvgPool(a)))
    }
}

pub(super) fn maxpool_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    argmax: &[usize],
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let n = nodes[a.0].value.numel();
    accumulate(adj, a, n, |s| {
        for (&i, &gi) in argmax.iter().zip(g) {
            s[i] += gi;
        }
    });
}

pub(super) fn global_avg_pool_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let dims = nodes[a.0].value.dims();
    let area = dims[2] * dims[3];
    let inv = T::of(1.0 / area as f64);
    let n = nodes[a.0].value.numel();
    accumulate(adj, a, n, |s| {
        for (plane, &gi) in s.chunks_exact_mut(area).zip(g) {
            let share = gi * inv;
            for d in plane {
                *d += share;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_tie_goes_to_first_element() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec([1, 1, 2, 2], vec![3.0, 3.0, 1.0, 3.0]).unwrap().with_grad());
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_window_too_large() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 2, 3]).unwrap());
        assert!(tape.maxpool2d(x, 3, 1).is_err());
    }

    #[test]
    fn global_avg_pool_of_constant_map() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full([2, 3, 4, 5], 1.75).unwrap());
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.shape(y).dims(), &[2, 3]);
        assert!(tape.data(y).iter().all(|&v| v == 1.75));
    }
}
