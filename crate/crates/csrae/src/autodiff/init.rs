use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Glorot uniform initialization on +-sqrt(6 / (fan_in + fan_out)).
pub fn glorot_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Seeded convenience wrapper.
pub fn glorot_init_seeded(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    glorot_init(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}
