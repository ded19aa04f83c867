use crate::error::{invalid, AutogradError, Result};
use crate::gemm::gemm;
use crate::scalar::Scalar;
use crate::tape::{accumulate, Node, Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// `[m×k]·[k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rank() != 2 || sb.rank() != 2 {
            return Err(invalid(
                "matmul",
                format!("operands must be matrices, got {sa} and {sb}"),
            ));
        }
        let (m, k) = (sa.dims()[0], sa.dims()[1]);
        let (k2, n) = (sb.dims()[0], sb.dims()[1]);
        if k != k2 {
            return Err(AutogradError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, n, k, self.data(a), self.data(b), T::zero(), &mut out);
        let out = Tensor::from_vec([m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }
}

pub(super) fn matmul_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: Var,
    b: Var,
    g: &[T],
    adj: &mut [Option<Vec<T>>],
) {
    let av = &nodes[a.0].value;
    let bv = &nodes[b.0].value;
    let (m, k) = (av.dims()[0], av.dims()[1]);
    let n = bv.dims()[1];
    // dA = dC·Bᵀ
    if nodes[a.0].needs_grad {
        accumulate(adj, a, m * k, |s| {
            gemm(false, true, m, k, n, g, bv.data(), T::one(), s)
        });
    }
    // dB = Aᵀ·dC
    if nodes[b.0].needs_grad {
        accumulate(adj, b, k * n, |s| {
            gemm(true, false, k, n, m, av.data(), g, T::one(), s)
        });
    }
}
