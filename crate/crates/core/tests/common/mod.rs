//! Shared helpers for the integration suites: independent numerical
//! oracles (plain gradient descent, central finite differences) that never
//! call the closed-form paths they are used to check.

#![allow(dead_code)]

use from_merge::rng::seeded_normal;
use from_merge::tensor::Tensor2D;

/// Relative error with a floor so near-zero references stay meaningful.
pub fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1e-12)
}

pub fn random_tensor(rows: usize, cols: usize, seed: u64, label: &str) -> Tensor2D {
    seeded_normal(rows, cols, 1.0, seed, label.as_bytes())
}

/// Minimize `Σᵢ wᵢ ‖θ − θᵢ‖²` by plain gradient descent from zero.
pub fn gd_minimize_weighted_distance(thetas: &[Tensor2D], w: &[f64], iters: usize) -> Tensor2D {
    let sum_w: f64 = w.iter().sum();
    let lr = 0.3 / sum_w.max(1e-300);
    let (rows, cols) = thetas[0].shape();
    let mut x = Tensor2D::zeros(rows, cols);
    for _ in 0..iters {
        let mut grad = Tensor2D::zeros(rows, cols);
        for (theta, wi) in thetas.iter().zip(w) {
            grad = grad.add(&x.sub(theta).unwrap().scale(2.0 * wi)).unwrap();
        }
        x = x.sub(&grad.scale(lr)).unwrap();
    }
    x
}

/// Central finite-difference gradient of a scalar function of a matrix.
pub fn fd_grad(f: &dyn Fn(&Tensor2D) -> f64, at: &Tensor2D, h: f64) -> Tensor2D {
    let (rows, cols) = at.shape();
    Tensor2D::from_fn(rows, cols, |i, j| {
        let bump = |delta: f64| {
            let m = Tensor2D::from_fn(rows, cols, |r, c| {
                if (r, c) == (i, j) {
                    at.get(r, c) + delta
                } else {
                    at.get(r, c)
                }
            });
            f(&m)
        };
        (bump(h) - bump(-h)) / (2.0 * h)
    })
}

/// Frobenius norm of the difference relative to the reference norm.
pub fn relative_distance(value: &Tensor2D, reference: &Tensor2D) -> f64 {
    value.sub(reference).unwrap().frobenius_norm() / reference.frobenius_norm().max(1e-12)
}
