//! Behavioral suites for the alternating low-rank merge: gradient fidelity
//! against finite differences, per-update optimality, monotone loss traces,
//! scaling consistency, and proximity to the global optimum.

mod common;

use common::{fd_grad, random_tensor, rel_err};
use from_merge::lora::{
    lora_grad_a, lora_grad_b, lora_objective, merge_lora_layer, norm_power_weights,
    oracle_lora_optimum, update_a, update_b, LoraMergeConfig, StopReason,
};
use from_merge::rng::seeded_normal;
use from_merge::tensor::Tensor2D;

struct Instance {
    thetas: Vec<Tensor2D>,
    w: Vec<f64>,
    a: Tensor2D,
    b: Tensor2D,
}

fn random_instance(seed: u64, d1: usize, d2: usize, r: usize, n: usize, k: f64) -> Instance {
    let thetas: Vec<Tensor2D> = (0..n)
        .map(|i| random_tensor(d1, d2, seed * 100 + i as u64, "theta"))
        .collect();
    let w = norm_power_weights(&thetas, k);
    let a = random_tensor(r, d2, seed + 7000, "a-init");
    let b = random_tensor(d1, r, seed + 8000, "b-init");
    Instance { thetas, w, a, b }
}

fn grad_rel_err(analytic: &Tensor2D, numeric: &Tensor2D) -> f64 {
    analytic.sub(numeric).unwrap().frobenius_norm() / analytic.frobenius_norm().max(1e-12)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let h = 1e-5;
    for seed in 0..30u64 {
        let d1 = 3 + (seed as usize % 4); // up to 6x4 instances
        let d2 = 2 + (seed as usize % 3);
        let r = 1 + (seed as usize % 2);
        let n = 1 + (seed as usize % 3);
        let inst = random_instance(seed, d1, d2, r, n, 0.9);

        let gb = lora_grad_b(&inst.a, &inst.b, &inst.thetas, &inst.w).unwrap();
        let fb = fd_grad(
            &|b: &Tensor2D| lora_objective(&inst.a, b, &inst.thetas, &inst.w).unwrap(),
            &inst.b,
            h,
        );
        let err_b = grad_rel_err(&gb, &fb);
        assert!(err_b <= 1e-6, "seed {seed}: dL/dB error {err_b}");

        let ga = lora_grad_a(&inst.a, &inst.b, &inst.thetas, &inst.w).unwrap();
        let fa = fd_grad(
            &|a: &Tensor2D| lora_objective(a, &inst.b, &inst.thetas, &inst.w).unwrap(),
            &inst.a,
            h,
        );
        let err_a = grad_rel_err(&ga, &fa);
        assert!(err_a <= 1e-6, "seed {seed}: dL/dA error {err_a}");
    }
}

#[test]
fn updates_never_increase_the_objective() {
    for seed in 0..200u64 {
        let d1 = 2 + (seed as usize % 6);
        let d2 = 2 + ((seed / 2) as usize % 6);
        let r = 1 + (seed as usize % d1.min(d2).min(3));
        let n = 1 + (seed as usize % 3);
        let inst = random_instance(seed, d1, d2, r, n, 0.9);

        let before = lora_objective(&inst.a, &inst.b, &inst.thetas, &inst.w).unwrap();
        let b = update_b(&inst.a, &inst.thetas, &inst.w, 1e-10).unwrap();
        let mid = lora_objective(&inst.a, &b, &inst.thetas, &inst.w).unwrap();
        assert!(
            mid <= before * (1.0 + 1e-12) + 1e-12,
            "seed {seed}: B update raised the loss {before} -> {mid}"
        );
        let a = update_a(&b, &inst.thetas, &inst.w, 1e-10).unwrap();
        let after = lora_objective(&a, &b, &inst.thetas, &inst.w).unwrap();
        assert!(
            after <= mid * (1.0 + 1e-12) + 1e-12,
            "seed {seed}: A update raised the loss {mid} -> {after}"
        );
    }
}

#[test]
fn updates_satisfy_first_order_conditions() {
    for seed in 0..40u64 {
        let inst = random_instance(seed, 6, 5, 2, 3, 0.9);
        let scale = 1.0
            + inst
                .thetas
                .iter()
                .zip(&inst.w)
                .map(|(t, wi)| wi * t.frobenius_norm())
                .sum::<f64>();

        let b = update_b(&inst.a, &inst.thetas, &inst.w, 1e-10).unwrap();
        let gb = lora_grad_b(&inst.a, &b, &inst.thetas, &inst.w).unwrap();
        assert!(
            gb.frobenius_norm() <= 1e-8 * scale,
            "seed {seed}: dL/dB after update = {}",
            gb.frobenius_norm()
        );

        let a = update_a(&b, &inst.thetas, &inst.w, 1e-10).unwrap();
        let ga = lora_grad_a(&a, &b, &inst.thetas, &inst.w).unwrap();
        assert!(
            ga.frobenius_norm() <= 1e-8 * scale,
            "seed {seed}: dL/dA after update = {}",
            ga.frobenius_norm()
        );
    }
}

#[test]
fn rank_deficient_factors_still_minimize() {
    // A with a zero row: AAᵀ is singular, the pseudoinverse route must
    // still land on a stationary point.
    let thetas = vec![random_tensor(5, 4, 77, "rd")];
    let w = vec![1.0];
    let mut a_data = random_tensor(2, 4, 78, "rd-a").data().to_vec();
    for x in a_data.iter_mut().take(4) {
        *x = 0.0;
    }
    let a = Tensor2D::from_vec(2, 4, a_data).unwrap();
    let b = update_b(&a, &thetas, &w, 1e-10).unwrap();
    let gb = lora_grad_b(&a, &b, &thetas, &w).unwrap();
    assert!(gb.frobenius_norm() <= 1e-8, "gradient {}", gb.frobenius_norm());
}

#[test]
fn loss_scales_as_c_to_the_k_plus_two() {
    let k = 0.9;
    let c = 2.0;
    for seed in 0..6u64 {
        let thetas: Vec<Tensor2D> = (0..3)
            .map(|i| random_tensor(8, 6, seed * 100 + i as u64, "scale"))
            .collect();
        let scaled: Vec<Tensor2D> = thetas.iter().map(|t| t.scale(c)).collect();
        let cfg = LoraMergeConfig {
            k,
            rank_out: 2,
            seed: seed + 1,
            ..LoraMergeConfig::default()
        };
        let (_, _, trace) = merge_lora_layer(&thetas, &cfg, "layer").unwrap();
        let (_, _, trace_scaled) = merge_lora_layer(&scaled, &cfg, "layer").unwrap();
        let expected = trace.final_loss * c.powf(k + 2.0);
        assert!(
            rel_err(trace_scaled.final_loss, expected) <= 1e-8,
            "seed {seed}: scaled loss {} vs expected {expected}",
            trace_scaled.final_loss
        );
    }
}

#[test]
fn oracle_beats_multi_restart_descent() {
    // Dense gradient descent on (B, A) from 20 restarts never beats the
    // truncated-SVD optimum by more than round-off.
    let (d1, d2, r, n) = (8, 6, 2, 3);
    let thetas: Vec<Tensor2D> = (0..n)
        .map(|i| random_tensor(d1, d2, 600 + i as u64, "oracle"))
        .collect();
    let w = norm_power_weights(&thetas, 0.9);
    let (_, oracle_loss) = oracle_lora_optimum(&thetas, &w, r).unwrap();

    let sum_w: f64 = w.iter().sum();
    let mut best = f64::INFINITY;
    for restart in 0..20u64 {
        let mut b = seeded_normal(d1, r, 0.5, restart, b"gd-b");
        let mut a = seeded_normal(r, d2, 0.5, restart, b"gd-a");
        let mut lr = 0.05 / sum_w;
        let mut prev = f64::INFINITY;
        for _ in 0..4000 {
            let ba = b.matmul(&a).unwrap();
            let mut gb = Tensor2D::zeros(d1, r);
            let mut ga = Tensor2D::zeros(r, d2);
            for (t, wi) in thetas.iter().zip(&w) {
                let resid = ba.sub(t).unwrap().scale(2.0 * wi);
                gb = gb.add(&resid.matmul(&a.transpose()).unwrap()).unwrap();
                ga = ga.add(&b.transpose().matmul(&resid).unwrap()).unwrap();
            }
            b = b.sub(&gb.scale(lr)).unwrap();
            a = a.sub(&ga.scale(lr)).unwrap();
            let loss = lora_objective(&a, &b, &thetas, &w).unwrap();
            if loss > prev {
                lr *= 0.5; // crude but sufficient step control
            }
            prev = loss;
        }
        best = best.min(prev);
    }
    assert!(
        best >= oracle_loss - 1e-8,
        "descent found {best}, below the oracle optimum {oracle_loss}"
    );
    assert!(
        best <= oracle_loss * (1.0 + 0.05),
        "descent never came close to the oracle: {best} vs {oracle_loss}"
    );
}

#[test]
fn alternating_merge_reaches_oracle_on_most_instances() {
    let mut within_tight = 0;
    let total = 12;
    for seed in 0..total as u64 {
        let d1 = 6 + (seed as usize % 10);
        let d2 = 5 + (seed as usize % 8);
        let r = 1 + (seed as usize % 3);
        let n = 1 + (seed as usize % 4);
        let k = 0.9;
        let thetas: Vec<Tensor2D> = (0..n)
            .map(|i| random_tensor(d1, d2, 7000 + seed * 10 + i as u64, "prox"))
            .collect();
        let w = norm_power_weights(&thetas, k);
        let cfg = LoraMergeConfig {
            k,
            rank_out: r,
            seed: seed + 40,
            ..LoraMergeConfig::default()
        };
        let (_, _, trace) = merge_lora_layer(&thetas, &cfg, "prox").unwrap();
        let (_, oracle_loss) = oracle_lora_optimum(&thetas, &w, r).unwrap();
        assert!(
            trace.final_loss >= oracle_loss * (1.0 - 1e-9) - 1e-12,
            "seed {seed}: ALS beat the global optimum ({} < {oracle_loss})",
            trace.final_loss
        );
        let rel = (trace.final_loss - oracle_loss) / oracle_loss.max(1e-12);
        assert!(rel <= 1e-2, "seed {seed}: relative excess {rel}");
        if rel <= 1e-6 {
            within_tight += 1;
        }
    }
    assert!(
        within_tight * 10 >= total * 9,
        "only {within_tight}/{total} instances reached the oracle within 1e-6"
    );
}

#[test]
fn trace_is_monotone_and_final_loss_matches_objective() {
    for seed in 0..10u64 {
        let thetas: Vec<Tensor2D> = (0..3)
            .map(|i| random_tensor(9, 7, 90 + seed * 10 + i as u64, "trace"))
            .collect();
        let cfg = LoraMergeConfig {
            rank_out: 3,
            seed,
            ..LoraMergeConfig::default()
        };
        let (b, a, trace) = merge_lora_layer(&thetas, &cfg, "trace").unwrap();
        let w = norm_power_weights(&thetas, cfg.k);
        let recomputed = lora_objective(&a, &b, &thetas, &w).unwrap();
        assert!(
            (recomputed - trace.final_loss).abs() <= 1e-12 * recomputed.max(1.0),
            "returned loss {} disagrees with objective {recomputed}",
            trace.final_loss
        );
        let monotone_prefix = match trace.stop_reason {
            StopReason::LossIncrease => &trace.losses[..trace.losses.len() - 1],
            _ => &trace.losses[..],
        };
        for pair in monotone_prefix.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss rose inside the trace: {pair:?}");
        }
        if trace.stop_reason == StopReason::LossIncrease {
            let last = *trace.losses.last().unwrap();
            assert!(last > trace.final_loss, "early stop without an increase");
        }
    }
}
