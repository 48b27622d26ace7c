//! Parameter initialization.

use rand::Rng;

use super::{Scalar, Tensor};

/// Fan-in-scaled uniform draw in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
/// Values are sampled in f64 and then narrowed, so f32 and f64 instantiations
/// of the same seed see the same numbers.
pub fn he_uniform<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(shape, data).expect("he_uniform shape")
}

/// Zero-initialized learnable tensor (biases, shifts).
pub fn zeros_param<T: Scalar>(shape: Vec<usize>) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    Tensor::param(shape, vec![T::zero(); numel]).expect("zeros shape")
}

/// One-initialized learnable tensor (batch-norm scales).
pub fn ones_param<T: Scalar>(shape: Vec<usize>) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    Tensor::param(shape, vec![T::one(); numel]).expect("ones shape")
}
