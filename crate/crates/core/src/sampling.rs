//! Seeded sampling helpers. Every estimator in the crate draws its samples
//! up front from one of these generators, so results depend only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point of `[-radius, radius]^n`.
pub fn uniform_box<R: Rng>(rng: &mut R, n: usize, radius: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-radius..=radius)).collect()
}

/// Uniform direction on the Euclidean unit sphere.
pub fn unit_direction<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Log-uniform value in `[lo, hi]`.
pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// A pair of points whose separation spans several decades: `x` uniform in
/// the box, `y = x + r * dir` with `r` log-uniform in
/// `[1e-3 * radius, radius]`.
pub fn multiscale_pair<R: Rng>(rng: &mut R, n: usize, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let x = uniform_box(rng, n, radius);
    let r = log_uniform(rng, 1e-3 * radius, radius);
    let dir = unit_direction(rng, n);
    let y = x.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
    (x, y)
}
