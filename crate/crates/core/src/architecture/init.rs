use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Scalar, Tensor};

/// Zero-mean Gaussian with variance `gain / fan_in`.
pub(crate) fn gaussian<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

pub(crate) fn zeros<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}

pub(crate) fn ones<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::full(shape, T::one())
}
