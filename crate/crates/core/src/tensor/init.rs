use rand::Rng;

use super::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, for conv and dense weights.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound)).with_requires_grad(true)
}

/// Uniform in `±sqrt(1 / hidden)`, for recurrent gate weights.
pub fn recurrent_uniform<R: Rng + ?Sized>(shape: &[usize], hidden: usize, rng: &mut R) -> Tensor {
    let bound = (1.0 / hidden as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound)).with_requires_grad(true)
}
