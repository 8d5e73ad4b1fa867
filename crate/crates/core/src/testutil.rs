//! Helpers shared by unit tests: seeded RNGs and central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with a small floor so zero-vs-zero compares clean.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(1e-8)
}

/// Central finite differences of a scalar function over a parameter vector.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(params: &[f64], eps: f64, mut f: F) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let hi = f(&work);
        work[i] = orig - eps;
        let lo = f(&work);
        work[i] = orig;
        grads.push((hi - lo) / (2.0 * eps));
    }
    grads
}
