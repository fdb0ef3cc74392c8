//! Dense 64-bit float tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a plain row-major value. Differentiation happens through a
//! [`Tape`]: leaves are registered on the tape, operations are recorded as
//! they execute, and [`Tape::backward`] replays the record in reverse to
//! populate gradients on every leaf that requested them.

mod gradcheck;
mod tape;

pub use gradcheck::{central_diff_grads, grad_check, max_relative_error};
pub use tape::{Tape, TensorId};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense n-dimensional float value, the unit of all numerical computation.
///
/// `values` are row-major. `grad` is populated (for `requires_grad` leaves)
/// only after a backward pass on the tape that owns the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, checking that `product(shape) == values.len()` and that
    /// every dimension is positive.
    pub fn new(shape: impl Into<Vec<usize>>, values: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: "dimensions must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("shape wants {numel} values, got {}", values.len()),
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros: consistent by construction")
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel]).expect("full: consistent by construction")
    }

    /// Scalar as a one-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar")
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor::new(vec![n], values).expect("vector: nonempty")
    }

    /// Samples every entry from `Normal(mean, std)` using the given RNG.
    pub fn randn(
        shape: impl Into<Vec<usize>>,
        mean: f64,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let dist = Normal::new(mean, std)
            .map_err(|e| Error::InvalidArgument(format!("randn: {e}")))?;
        let values = (0..numel).map(|_| dist.sample(rng)).collect();
        Tensor::new(shape, values)
    }

    /// Marks the tensor as a differentiation leaf.
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient buffer, present only after a backward pass.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "item",
                shape: self.shape.clone(),
                reason: "expected a scalar".into(),
            });
        }
        Ok(self.values[0])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Option<Vec<f64>> {
        &mut self.grad
    }

    pub(crate) fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn shape_value_count_must_agree() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn randn_is_seed_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(vec![4, 4], 0.0, 0.02, &mut a).unwrap();
        let y = Tensor::randn(vec![4, 4], 0.0, 0.02, &mut b).unwrap();
        assert_eq!(x.values(), y.values());
    }

    #[test]
    fn scalar_item() {
        assert_eq!(Tensor::scalar(3.5).item().unwrap(), 3.5);
        assert!(Tensor::vector(vec![1.0, 2.0]).item().is_err());
    }
}
