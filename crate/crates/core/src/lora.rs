//! Merging LoRA adapters by alternating minimization of the norm-weighted
//! low-rank objective `L(A, B) = Σᵢ wᵢ ‖BA − θᵢ‖_F²` with `wᵢ = ‖θᵢ‖_F^k`.
//!
//! Each half-step has a closed form built on the Moore-Penrose inverse:
//!
//! ```text
//! B = (Σᵢ wᵢ θᵢ Aᵀ)(Σᵢ wᵢ A Aᵀ)⁺        A = (Σᵢ wᵢ Bᵀ B)⁺ (Σᵢ wᵢ Bᵀ θᵢ)
//! ```
//!
//! and is the exact minimizer over its factor with the other held fixed, so
//! the loss sequence is non-increasing in exact arithmetic. Pseudoinverse
//! round-off can break that in rare cases, which is why the loop stops as
//! soon as the loss rises and returns the previous iterate.
//!
//! The objective decouples as
//! `Σᵢ wᵢ ‖M − θᵢ‖² = (Σwᵢ)‖M − θ̄‖² + Σᵢ wᵢ‖θᵢ − θ̄‖²` with
//! `θ̄ = Σwᵢθᵢ/Σwᵢ`, so the global optimum over rank-r matrices is the
//! truncated SVD of `θ̄`; [`oracle_lora_optimum`] computes it directly and
//! serves as an independent check on the alternating path.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Dtype, LoraAdapter, LoraPair};
use crate::linalg::truncated_svd_approx;
use crate::rng::seeded_normal;
use crate::tensor::Tensor2D;

/// Relative loss change below which the loop is considered converged.
const CONVERGENCE_REL_TOL: f64 = 1e-10;

/// Settings for the alternating low-rank merge.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoraMergeConfig {
    /// Norm exponent of the weighting.
    pub k: f64,
    /// Rank of the merged factors.
    pub rank_out: usize,
    /// Iteration cap (one iteration = one B update plus one A update).
    pub max_iters: usize,
    /// Standard deviation of the normal initialization of `A`.
    pub init_sigma: f64,
    pub seed: u64,
    pub rcond: f64,
    /// Absolute loss increase tolerated before the early stop triggers.
    pub loss_tol: f64,
}

impl Default for LoraMergeConfig {
    fn default() -> Self {
        LoraMergeConfig {
            k: 0.9,
            rank_out: 8,
            max_iters: 100,
            init_sigma: 0.02,
            seed: 0,
            rcond: crate::linalg::DEFAULT_RCOND,
            loss_tol: 0.0,
        }
    }
}

impl LoraMergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0) {
            return Err(Error::Validation(format!("k must be >= 0, got {}", self.k)));
        }
        if self.rank_out == 0 {
            return Err(Error::Validation("rank_out must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be positive".into()));
        }
        if !(self.init_sigma > 0.0) {
            return Err(Error::Validation(format!(
                "init_sigma must be positive, got {}",
                self.init_sigma
            )));
        }
        if !(self.rcond > 0.0 && self.rcond < 1.0) {
            return Err(Error::Validation(format!(
                "rcond must lie in (0, 1), got {}",
                self.rcond
            )));
        }
        if !(self.loss_tol >= 0.0) {
            return Err(Error::Validation(format!(
                "loss_tol must be >= 0, got {}",
                self.loss_tol
            )));
        }
        Ok(())
    }
}

/// Why the alternating loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossIncrease,
    MaxIters,
    Converged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::LossIncrease => "loss_increase",
            StopReason::MaxIters => "max_iters",
            StopReason::Converged => "converged",
        }
    }
}

/// Per-layer record of the alternating optimization.
///
/// `losses` holds every evaluated loss, one per full (B, A) iteration; when
/// the early stop triggers, the final recorded value is the increase that
/// caused it and `final_loss` is the loss of the returned (earlier) pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoraMergeTrace {
    pub layer: String,
    pub losses: Vec<f64>,
    pub stop_reason: StopReason,
    pub final_loss: f64,
    pub oracle_loss: Option<f64>,
}

/// Norm-power weights `wᵢ = ‖θᵢ‖_F^k`, with `0^0` taken as 1.
pub fn norm_power_weights(thetas: &[Tensor2D], k: f64) -> Vec<f64> {
    thetas
        .iter()
        .map(|t| {
            let n = t.frobenius_norm();
            if k == 0.0 {
                1.0
            } else {
                n.powf(k)
            }
        })
        .collect()
}

/// The merge objective `Σᵢ wᵢ ‖BA − θᵢ‖_F²`.
pub fn lora_objective(a: &Tensor2D, b: &Tensor2D, thetas: &[Tensor2D], w: &[f64]) -> Result<f64> {
    let ba = b.matmul(a)?;
    let mut loss = 0.0;
    for (theta, wi) in thetas.iter().zip(w) {
        loss += wi * ba.sq_frobenius_distance(theta)?;
    }
    Ok(loss)
}

/// Gradient of the objective in `B`: `2 Σᵢ wᵢ (BA − θᵢ) Aᵀ`.
pub fn lora_grad_b(
    a: &Tensor2D,
    b: &Tensor2D,
    thetas: &[Tensor2D],
    w: &[f64],
) -> Result<Tensor2D> {
    let ba = b.matmul(a)?;
    let at = a.transpose();
    let mut grad = Tensor2D::zeros(b.rows(), b.cols());
    for (theta, wi) in thetas.iter().zip(w) {
        let resid = ba.sub(theta)?;
        grad = grad.add(&resid.matmul(&at)?.scale(2.0 * wi))?;
    }
    Ok(grad)
}

/// Gradient of the objective in `A`: `2 Σᵢ wᵢ Bᵀ (BA − θᵢ)`.
pub fn lora_grad_a(
    a: &Tensor2D,
    b: &Tensor2D,
    thetas: &[Tensor2D],
    w: &[f64],
) -> Result<Tensor2D> {
    let ba = b.matmul(a)?;
    let bt = b.transpose();
    let mut grad = Tensor2D::zeros(a.rows(), a.cols());
    for (theta, wi) in thetas.iter().zip(w) {
        let resid = ba.sub(theta)?;
        grad = grad.add(&bt.matmul(&resid)?.scale(2.0 * wi))?;
    }
    Ok(grad)
}

/// Exact minimizer over `B` with `A` fixed.
pub fn update_b(a: &Tensor2D, thetas: &[Tensor2D], w: &[f64], rcond: f64) -> Result<Tensor2D> {
    let at = a.transpose();
    let sum_w: f64 = w.iter().sum();
    let mut num: Option<Tensor2D> = None;
    for (theta, wi) in thetas.iter().zip(w) {
        let term = theta.matmul(&at)?.scale(*wi);
        num = Some(match num {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    let num = num.ok_or_else(|| Error::Validation("update_b needs at least one matrix".into()))?;
    let den = a.matmul(&at)?.scale(sum_w);
    num.matmul(&den.pinv(rcond)?)
}

/// Exact minimizer over `A` with `B` fixed.
pub fn update_a(b: &Tensor2D, thetas: &[Tensor2D], w: &[f64], rcond: f64) -> Result<Tensor2D> {
    let bt = b.transpose();
    let sum_w: f64 = w.iter().sum();
    let mut num: Option<Tensor2D> = None;
    for (theta, wi) in thetas.iter().zip(w) {
        let term = bt.matmul(theta)?.scale(*wi);
        num = Some(match num {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    let num = num.ok_or_else(|| Error::Validation("update_a needs at least one matrix".into()))?;
    let den = bt.matmul(b)?.scale(sum_w);
    den.pinv(rcond)?.matmul(&num)
}

fn validate_thetas(thetas: &[Tensor2D], rank: usize) -> Result<(usize, usize)> {
    let first = thetas
        .first()
        .ok_or_else(|| Error::Validation("at least one input matrix is required".into()))?;
    let (d1, d2) = first.shape();
    for (i, t) in thetas.iter().enumerate().skip(1) {
        if t.shape() != (d1, d2) {
            return Err(Error::Shape(format!(
                "input {i} has shape {}x{}, expected {d1}x{d2}",
                t.rows(),
                t.cols()
            )));
        }
    }
    if rank > d1.min(d2) {
        return Err(Error::Validation(format!(
            "rank {rank} exceeds min(d1, d2) = {} for a {d1}x{d2} layer",
            d1.min(d2)
        )));
    }
    Ok((d1, d2))
}

/// Alternating minimization for one layer.
///
/// `A` starts from a seeded normal keyed by `(seed, layer_name)`; each
/// iteration updates `B` then `A` and evaluates the loss once. The loop
/// stops when the loss rises by more than `loss_tol` (returning the
/// previous pair), when the relative change drops below the convergence
/// tolerance, or after `max_iters` iterations.
pub fn merge_lora_layer(
    thetas: &[Tensor2D],
    cfg: &LoraMergeConfig,
    layer_name: &str,
) -> Result<(Tensor2D, Tensor2D, LoraMergeTrace)> {
    cfg.validate()?;
    let (_, d2) = validate_thetas(thetas, cfg.rank_out)?;
    let w = norm_power_weights(thetas, cfg.k);

    let mut a = seeded_normal(
        cfg.rank_out,
        d2,
        cfg.init_sigma,
        cfg.seed,
        layer_name.as_bytes(),
    );
    let mut best: Option<(Tensor2D, Tensor2D)> = None;
    let mut prev_loss = f64::INFINITY;
    let mut losses = Vec::new();
    let mut stop_reason = StopReason::MaxIters;

    for _ in 0..cfg.max_iters {
        let b = update_b(&a, thetas, &w, cfg.rcond)?;
        a = update_a(&b, thetas, &w, cfg.rcond)?;
        let loss = lora_objective(&a, &b, thetas, &w)?;
        losses.push(loss);
        if loss > prev_loss + cfg.loss_tol {
            stop_reason = StopReason::LossIncrease;
            break;
        }
        best = Some((b, a.clone()));
        if prev_loss.is_finite() && (prev_loss - loss).abs() <= CONVERGENCE_REL_TOL * prev_loss.abs()
        {
            prev_loss = loss;
            stop_reason = StopReason::Converged;
            break;
        }
        prev_loss = loss;
    }

    let (b, a) = best.expect("max_iters >= 1 and the first iteration cannot increase");
    let final_loss = prev_loss;
    let trace = LoraMergeTrace {
        layer: layer_name.to_string(),
        losses,
        stop_reason,
        final_loss,
        oracle_loss: None,
    };
    Ok((b, a, trace))
}

/// Exact global optimum of the merge objective over rank-`r` products.
///
/// Returns the optimal dense matrix `M*` (the rank-`r` truncation of the
/// weighted mean `θ̄`) and the optimal loss
/// `(Σwᵢ)·Σ_{j>r} σⱼ(θ̄)² + Σᵢ wᵢ‖θᵢ − θ̄‖²`.
pub fn oracle_lora_optimum(
    thetas: &[Tensor2D],
    w: &[f64],
    rank: usize,
) -> Result<(Tensor2D, f64)> {
    let (d1, d2) = validate_thetas(thetas, rank)?;
    if thetas.len() != w.len() {
        return Err(Error::Validation(format!(
            "{} matrices but {} weights",
            thetas.len(),
            w.len()
        )));
    }
    let sum_w: f64 = w.iter().sum();
    if sum_w == 0.0 {
        return Ok((Tensor2D::zeros(d1, d2), 0.0));
    }
    let terms: Vec<(f64, &Tensor2D)> = thetas.iter().zip(w).map(|(t, wi)| (wi / sum_w, t)).collect();
    let mean = Tensor2D::weighted_sum(&terms)?;
    let (optimum, tail_energy) = truncated_svd_approx(&mean, rank)?;
    let mut spread = 0.0;
    for (theta, wi) in thetas.iter().zip(w) {
        spread += wi * theta.sq_frobenius_distance(&mean)?;
    }
    Ok((optimum, sum_w * tail_energy + spread))
}

/// Merge several adapters into one of rank `cfg.rank_out`.
///
/// Each adapter's layers are densified to `scaling_alpha · B · A` and merged
/// independently (in parallel across layers). The output adapter has
/// `scaling_alpha = 1` and carries the optimal-loss oracle value in each
/// layer's trace.
pub fn merge_adapters(
    adapters: &[LoraAdapter],
    cfg: &LoraMergeConfig,
) -> Result<(LoraAdapter, Vec<LoraMergeTrace>)> {
    cfg.validate()?;
    let first = adapters
        .first()
        .ok_or_else(|| Error::Validation("at least one adapter is required".into()))?;
    let names: Vec<String> = first.layers.keys().cloned().collect();
    for (i, adapter) in adapters.iter().enumerate().skip(1) {
        let mut offending: Vec<String> = Vec::new();
        for name in &names {
            match adapter.layers.get(name) {
                None => offending.push(name.clone()),
                Some(pair) if pair.dense_shape() != first.layers[name].dense_shape() => {
                    offending.push(name.clone())
                }
                _ => {}
            }
        }
        for name in adapter.layers.keys() {
            if !first.layers.contains_key(name) {
                offending.push(name.clone());
            }
        }
        if !offending.is_empty() {
            offending.sort();
            offending.dedup();
            return Err(Error::Validation(format!(
                "adapter {i} disagrees with adapter 0 on layers: {}",
                offending.join(", ")
            )));
        }
    }

    let merged: Vec<(String, LoraPair, LoraMergeTrace)> = names
        .par_iter()
        .map(|name| -> Result<(String, LoraPair, LoraMergeTrace)> {
            let thetas: Vec<Tensor2D> = adapters
                .iter()
                .map(|ad| ad.dense_delta(name))
                .collect::<Result<_>>()?;
            let (b, a, mut trace) = merge_lora_layer(&thetas, cfg, name)?;
            let w = norm_power_weights(&thetas, cfg.k);
            let (_, oracle_loss) = oracle_lora_optimum(&thetas, &w, cfg.rank_out)?;
            trace.oracle_loss = Some(oracle_loss);
            Ok((name.clone(), LoraPair { b, a }, trace))
        })
        .collect::<Result<_>>()?;

    let mut layers = BTreeMap::new();
    let mut traces = Vec::with_capacity(merged.len());
    for (name, pair, trace) in merged {
        layers.insert(name, pair);
        traces.push(trace);
    }
    traces.sort_by(|x, y| x.layer.cmp(&y.layer));

    Ok((
        LoraAdapter {
            layers,
            rank: cfg.rank_out,
            scaling_alpha: 1.0,
            dtype: Dtype::F64,
        },
        traces,
    ))
}
