//! Weight initialization.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

/// Centered uniform draw scaled by `1/sqrt(fan_in)`.
pub fn uniform<F: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<F> = (0..numel)
        .map(|_| F::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Standard-normal tensor (sampled in f64, then cast).
pub fn standard_normal<F: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor<F> {
    let numel: usize = shape.iter().product();
    let data: Vec<F> = (0..numel)
        .map(|_| F::of(rng.sample::<f64, _>(rand_distr::StandardNormal)))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}
