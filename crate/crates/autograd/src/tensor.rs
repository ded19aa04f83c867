use std::fmt;

use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;

/// Extents of a tensor, outermost first. The empty shape is a scalar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}

/// Dense row-major array with an optional gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.dims().iter().any(|&d| d == 0) {
            return Err(AutogradError::InvalidArgument {
                op: "tensor",
                reason: format!("extents must be positive, got {shape}"),
            });
        }
        if shape.numel() != data.len() {
            return Err(AutogradError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = shape.numel();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Shape>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a differentiation target.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// First element; the value of a scalar tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient, creating a zero accumulator first.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(AutogradError::DataLength {
                shape: self.shape.clone(),
                len: delta.len(),
            });
        }
        let g = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (acc, d) in g.iter_mut().zip(delta) {
            *acc += *d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshaped(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.data.len() {
            return Err(AutogradError::DataLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copy with values converted to another element type. Gradients are dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// Rows `start..start + count` along the leading axis.
    pub fn slice_outer(&self, start: usize, count: usize) -> Result<Self> {
        let dims = self.dims();
        if dims.is_empty() || count == 0 || start + count > dims[0] {
            return Err(AutogradError::InvalidArgument {
                op: "slice_outer",
                reason: format!("rows {start}..{} out of range for {}", start + count, self.shape),
            });
        }
        let stride = self.numel() / dims[0];
        let mut new_dims = dims.to_vec();
        new_dims[0] = count;
        Self::from_vec(new_dims, self.data[start * stride..(start + count) * stride].to_vec())
    }

    /// Gathers the listed rows along the leading axis, in order.
    pub fn gather_outer(&self, rows: &[usize]) -> Result<Self> {
        let dims = self.dims();
        if dims.is_empty() || rows.is_empty() {
            return Err(AutogradError::InvalidArgument {
                op: "gather_outer",
                reason: "need a non-scalar tensor and at least one row".into(),
            });
        }
        let stride = self.numel() / dims[0];
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= dims[0] {
                return Err(AutogradError::InvalidArgument {
                    op: "gather_outer",
                    reason: format!("row {r} out of range for {}", self.shape),
                });
            }
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        let mut new_dims = dims.to_vec();
        new_dims[0] = rows.len();
        Self::from_vec(new_dims, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = Tensor::<f32>::from_vec([2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, AutogradError::DataLength { len: 5, .. }));
    }

    #[test]
    fn rejects_zero_extent() {
        assert!(Tensor::<f32>::from_vec([0, 3], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates_and_clears() {
        let mut t = Tensor::<f64>::zeros([2]).unwrap().with_grad();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn shape_display() {
        assert_eq!(Shape::new([2, 1, 4]).to_string(), "[2×1×4]");
        assert_eq!(Shape::scalar().to_string(), "[]");
    }

    #[test]
    fn gather_rows() {
        let t = Tensor::<f32>::from_vec([3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let g = t.gather_outer(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[4., 5., 0., 1.]);
        assert_eq!(t.slice_outer(1, 2).unwrap().data(), &[2., 3., 4., 5.]);
    }
}
