//! Trainable parameters and the adaptive-moment optimizer.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// A named trainable tensor with its gradient and optimizer state.
#[derive(Clone, Debug)]
pub struct Parameter<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    /// First-moment accumulator.
    moment1: Tensor<F>,
    /// Second-moment accumulator.
    moment2: Tensor<F>,
    pub steps: u64,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Parameter<F> {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(shape.clone()),
            moment1: Tensor::zeros(shape.clone()),
            moment2: Tensor::zeros(shape),
            steps: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|x| *x = F::zero());
    }
}

/// Bias-corrected adaptive-moment update (Adam, Algorithm-1 form with
/// epsilon outside the square root).
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

/// One optimizer step over all parameters, consuming their gradients.
/// A non-finite gradient aborts with the parameter named.
pub fn adam_step<F: Scalar>(params: &mut [Parameter<F>], cfg: &AdamConfig) -> Result<()> {
    for p in params.iter_mut() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of parameter '{}' at step {}", p.name, p.steps + 1),
            });
        }
        p.steps += 1;
        let t = p.steps as i32;
        let b1 = F::of(cfg.beta1);
        let b2 = F::of(cfg.beta2);
        let corr1 = F::of(1.0 - cfg.beta1.powi(t));
        let corr2 = F::of(1.0 - cfg.beta2.powi(t));
        let lr = F::of(cfg.lr);
        let eps = F::of(cfg.eps);
        let one = F::one();
        for i in 0..p.value.numel() {
            let g = p.grad.data()[i];
            let m = b1 * p.moment1.data()[i] + (one - b1) * g;
            let v = b2 * p.moment2.data()[i] + (one - b2) * g * g;
            p.moment1.data_mut()[i] = m;
            p.moment2.data_mut()[i] = v;
            let m_hat = m / corr1;
            let v_hat = v / corr2;
            p.value.data_mut()[i] = p.value.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// An ordered collection of parameters; the order defines the leaf layout
/// used by model forward passes and the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F: Scalar> {
    params: Vec<Parameter<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> ParamSet<F> {
        ParamSet { params: Vec::new() }
    }

    /// Registers a parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Inserts every parameter value into a graph as a differentiable
    /// leaf, in registration order.
    pub fn leaves(&self, g: &mut Graph<F>) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone().with_grad()))
            .collect()
    }

    /// Inserts every parameter value as a constant (inference mode).
    pub fn constants(&self, g: &mut Graph<F>) -> Vec<NodeId> {
        self.params.iter().map(|p| g.constant(p.value.clone())).collect()
    }

    /// Overwrites gradients from a same-order list of tensors.
    pub fn set_grads(&mut self, grads: &[Tensor<F>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::shape("ParamSet::set_grads", "parameter count", self.params.len(), grads.len()));
        }
        for (p, g) in self.params.iter_mut().zip(grads.iter()) {
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    "ParamSet::set_grads",
                    "gradient shape",
                    format!("{:?}", p.value.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            p.grad = g.clone();
        }
        Ok(())
    }

    /// Replaces all values (e.g. restoring a best-epoch snapshot).
    pub fn set_values(&mut self, values: &[Tensor<F>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape("ParamSet::set_values", "parameter count", self.params.len(), values.len()));
        }
        for (p, v) in self.params.iter_mut().zip(values.iter()) {
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<Tensor<F>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}
