//! Reverse-mode automatic differentiation over dense, row-major tensors.
//!
//! A [`Tape`] records every operation applied to its nodes. Calling
//! [`Tape::backward`] on a scalar node replays the record in reverse and
//! accumulates adjoints into each node that depends on a tensor created with
//! `requires_grad = true`.
//!
//! The operation set is deliberately small: elementwise arithmetic, matrix
//! product, 2-D convolution, ReLU, max and global-average pooling, row-wise
//! log-softmax and a fused softmax cross-entropy. There is no broadcasting;
//! shapes are adapted with [`Tape::reshape`] and [`Tape::expand_rows`].
//!
//! ```
//! use fmce_autograd::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let a = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
//! let b = tape.constant(Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
//! let ab = tape.mul(a, b).unwrap();
//! let loss = tape.sum(ab).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
//! ```

pub mod catalog;
pub mod check;
mod error;
mod gemm;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{AutogradError, Result};
pub use ops::conv::ConvGeometry;
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
