//! Deterministic, label-keyed random streams.
//!
//! Every stochastic quantity in the crate is drawn from a ChaCha stream
//! whose key is derived from `(seed, label)`. Streams for distinct labels
//! are independent, and a stream's output does not depend on when or on
//! which thread it is consumed, so per-layer work can run in parallel
//! without affecting results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::tensor::Tensor2D;

/// Counter-based generator keyed by `(seed, label)`.
pub fn stream_rng(seed: u64, label: &[u8]) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label);
    ChaCha12Rng::from_seed(hasher.finalize().into())
}

/// Matrix of i.i.d. `N(0, sigma²)` samples, fully determined by
/// `(rows, cols, sigma, seed, label)`.
pub fn seeded_normal(rows: usize, cols: usize, sigma: f64, seed: u64, label: &[u8]) -> Tensor2D {
    assert!(sigma > 0.0, "sigma must be positive, got {sigma}");
    let mut rng = stream_rng(seed, label);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Tensor2D::from_vec(rows, cols, data).expect("length matches by construction")
}

/// Stream of uniform samples in `[0, 1)` keyed by `(seed, label)`.
pub fn seeded_uniform(len: usize, seed: u64, label: &[u8]) -> Vec<f64> {
    let mut rng = stream_rng(seed, label);
    (0..len).map(|_| rng.random::<f64>()).collect()
}
