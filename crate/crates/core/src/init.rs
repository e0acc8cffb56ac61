//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;

/// The generator used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Half-width of the Kaiming-uniform range, `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    assert!(fan_in >= 1, "fan_in must be at least 1");
    (6.0 / fan_in as f64).sqrt()
}

/// Uniform samples on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
pub fn kaiming_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = kaiming_bound(fan_in);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Convenience wrapper drawing from a fresh generator.
pub fn kaiming_init(rows: usize, cols: usize, fan_in: usize, seed: u64) -> Matrix {
    kaiming_uniform(rows, cols, fan_in, &mut seeded_rng(seed))
}
