//! Shared seeded inputs for the benchmarks.

use polymoment::signals::sample_distribution;
use polymoment::{DMatrix, DVector, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SEED: u64 = 2024;

/// Centred chi-square(3) noise.
pub fn skewed_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_distribution(&Distribution::ChiSquare { k: 3.0 }, n, &mut rng)
        .unwrap()
        .into_iter()
        .map(|v| v - 3.0)
        .collect()
}

/// `y = 2 exp(0.5 x) + e` on an even grid over `[0, 1]`.
pub fn exponential_data(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let noise = skewed_noise(n, SEED);
    let x = DMatrix::from_fn(n, 1, |r, _| r as f64 / (n - 1) as f64);
    let y = DVector::from_fn(n, |r, _| 2.0 * (0.5 * x[(r, 0)]).exp() + noise[r]);
    (x, y)
}

/// Input and output of a short-memory quadratic plant.
pub fn volterra_data(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let x = sample_distribution(&Distribution::Normal { mean: 0.0, sd: 1.0 }, n, &mut rng).unwrap();
    let noise = skewed_noise(n, SEED + 1);
    let y = (0..n)
        .map(|i| {
            let lag = if i > 0 { x[i - 1] } else { 0.0 };
            0.8 * x[i] + 0.3 * lag + 0.2 * x[i] * lag + 0.1 * noise[i]
        })
        .collect();
    (x, y)
}

/// Standard normal stream.
pub fn gaussian_stream(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    sample_distribution(&Distribution::Normal { mean: 0.0, sd: 1.0 }, n, &mut rng).unwrap()
}
