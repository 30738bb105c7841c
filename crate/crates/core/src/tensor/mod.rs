//! Dense tensors and reverse-mode automatic differentiation.

pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod nn;
pub mod param;

pub use graph::{Graph, NodeId};
pub use param::{adam_step, AdamConfig, ParamSet, Parameter};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense row-major tensor. The shape is fixed at creation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Tensor<F>> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape("Tensor::from_vec", "element count", numel, data.len()));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor<F> {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![F::zero(); numel], requires_grad: false }
    }

    pub fn filled(shape: Vec<usize>, value: F) -> Tensor<F> {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel], requires_grad: false }
    }

    pub fn scalar(value: F) -> Tensor<F> {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false }
    }

    pub fn with_grad(mut self) -> Tensor<F> {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// The single element of a 1-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.data.len() != 1 {
            return Err(Error::shape("Tensor::item", "element count", 1, self.data.len()));
        }
        Ok(self.data[0])
    }

    /// New tensor with the same elements in a different shape.
    pub fn into_reshaped(self, shape: Vec<usize>) -> Result<Tensor<F>> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape("Tensor::reshape", "element count", self.data.len(), numel));
        }
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::zip",
                "shape",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn clamp(&self, lo: F, hi: F) -> Tensor<F> {
        self.map(|x| x.max(lo).min(hi))
    }

    /// Row-major element at `(r, c)` of a rank-2 tensor.
    pub fn at2(&self, r: usize, c: usize) -> F {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Converts every element to another scalar type.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::of(x.f64())).collect(),
            requires_grad: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![0], vec![]).is_err());
    }

    #[test]
    fn item_requires_single_element() {
        assert_eq!(Tensor::scalar(4.0f64).item().unwrap(), 4.0);
        assert!(Tensor::<f64>::zeros(vec![2]).item().is_err());
    }
}
