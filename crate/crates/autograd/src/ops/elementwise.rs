use crate::error::{invalid, AutogradError, Result};
use crate::scalar::Scalar;
use crate::tape::{accumulate, Node, Op, Tape, Var};
use crate::tensor::{Shape, Tensor};

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutogradError::ShapeMismatch {
                op,
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(self.shape(a).clone(), data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.check(a)?;
        let data = self.data(a).iter().map(|&x| x * s).collect();
        let out = Tensor::from_vec(self.shape(a).clone(), data)?;
        Ok(self.push(out, Op::Scale(a, s)))
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let data = self
            .data(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let out = Tensor::from_vec(self.shape(a).clone(), data)?;
        Ok(self.push(out, Op::Relu(a)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.data(a).iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a)))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let n = T::of(self.data(a).len() as f64);
        let s: T = self.data(a).iter().copied().sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mean(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Shape>) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Repeats a rank-1 tensor of length `n` as the rows of a `rows×n` matrix.
    pub fn expand_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.check(a)?;
        let dims = self.shape(a).dims();
        if dims.len() != 1 || rows == 0 {
            return Err(invalid(
                "expand_rows",
                format!("need a rank-1 input and rows > 0, got {} and {rows}", self.shape(a)),
            ));
        }
        let n = dims[0];
        let src = self.data(a);
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(src);
        }
        let out = Tensor::from_vec([rows, n], data)?;
        Ok(self.push(out, Op::ExpandRows(a)))
    }
}

fn len_of<T: Scalar>(nodes: &[Node<T>], v: Var) -> usize {
    nodes[v.0].value.numel()
}

pub(super) fn add_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    for v in [a, b] {
        if nodes[v.0].needs_grad {
            accumulate(adj, v, g.len(), |s| {
                for (d, &x) in s.iter_mut().zip(g) {
                    *d += x;
                }
            });
        }
    }
}

pub(super) fn sub_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if nodes[a.0].needs_grad {
        accumulate(adj, a, g.len(), |s| {
            for (d, &x) in s.iter_mut().zip(g) {
                *d += x;
            }
        });
    }
    if nodes[b.0].needs_grad {
        accumulate(adj, b, g.len(), |s| {
            for (d, &x) in s.iter_mut().zip(g) {
                *d -= x;
            }
        });
    }
}

pub(super) fn mul_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    for (target, other) in [(a, b), (b, a)] {
        if nodes[target.0].needs_grad {
            let o = nodes[other.0].value.data();
            accumulate(adj, target, g.len(), |s| {
                for ((d, &x), &y) in s.iter_mut().zip(g).zip(o) {
                    *d += x * y;
                }
            });
        }
    }
}

pub(super) fn scale_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    k: T,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if nodes[a.0].needs_grad {
        accumulate(adj, a, g.len(), |s| {
            for (d, &x) in s.iter_mut().zip(g) {
                *d += x * k;
            }
        });
    }
}

pub(super) fn relu_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let x = nodes[a.0].value.data();
    accumulate(adj, a, g.len(), |s| {
        for ((d, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
            if xi > T::zero() {
                *d += gi;
            }
        }
    });
}

pub(super) fn sum_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if nodes[a.0].needs_grad {
        let n = len_of(nodes, a);
        accumulate(adj, a, n, |s| {
            for d in s.iter_mut() {
                *d += g[0];
            }
        });
    }
}

pub(super) fn mean_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if nodes[a.0].needs_grad {
        let n = len_of(nodes, a);
        let share = g[0] / T::of(n as f64);
        accumulate(adj, a, n, |s| {
            for d in s.iter_mut() {
                *d += share;
            }
        });
    }
}

pub(super) fn reshape_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if nodes[a.0].needs_grad {
        accumulate(adj, a, g.len(), |s| {
            for (d, &x) in s.iter_mut().zip(g) {
                *d += x;
            }
        });
    }
}

pub(super) fn expand_rows_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let n = len_of(nodes, a);
    accumulate(adj, a, n, |s| {
        for row in g.chunks_exact(n) {
            for (d, &x) in s.iter_mut().zip(row) {
                *d += x;
            }
        }
    });
}
