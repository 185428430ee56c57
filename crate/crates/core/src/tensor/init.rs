use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};

/// Seeded generator used for parameter initialization.
pub type InitRng = ChaCha8Rng;

pub fn init_rng(seed: u64) -> InitRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[-a, a]` with `a = √(6/(fan_in+fan_out))`.
pub fn glorot_uniform<T: Scalar>(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut InitRng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    Tensor::from_fn(dims.to_vec(), |_| T::from_f64(dist.sample(rng)))
}
