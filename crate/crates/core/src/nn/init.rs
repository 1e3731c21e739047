use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Standard deviation of the zero-mean Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;

/// Deterministic parameter initialisation from a 64-bit seed.
///
/// Rank-1 shapes are biases and start at zero; higher-rank shapes are
/// weights drawn from `N(0, 0.02²)`.
pub fn init_params(shapes: &[&[usize]], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|shape| {
            if shape.len() <= 1 {
                Tensor::zeros(shape)
            } else {
                Tensor::randn(shape, INIT_STD, &mut rng)
            }
        })
        .collect()
}
