//! Task-vector extraction and merging of fully fine-tuned models.
//!
//! The central operation is [`from_merge`]: per layer (or per model, see
//! [`NormScope`]), each task vector gets the weight `wᵢ = ‖θᵢ‖_F^k` and the
//! merged vector is the weighted mean `Σ wᵢ θᵢ / Σ wᵢ`, the exact minimizer
//! of `Σᵢ wᵢ ‖θ − θᵢ‖_F²`. `k = 0` reduces to the simple average and large
//! `k` approaches picking the largest-norm vector. The remaining operations
//! are the usual comparison baselines (task arithmetic, DARE, RegMean,
//! max-norm selection).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Checkpoint, TensorEntry};
use crate::rng::stream_rng;
use crate::tensor::Tensor2D;
use rand::Rng;

/// Per-layer weight deltas of one fine-tuned model relative to its base.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskVector {
    pub deltas: BTreeMap<String, Tensor2D>,
    pub source_label: String,
}

impl TaskVector {
    pub fn layer_names(&self) -> impl Iterator<Item = &String> {
        self.deltas.keys()
    }

    /// Frobenius norm of the whole model's concatenated deltas.
    pub fn model_norm(&self) -> f64 {
        self.deltas
            .values()
            .map(Tensor2D::sq_frobenius_norm)
            .sum::<f64>()
            .sqrt()
    }
}

/// Merge strategy selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethod {
    From,
    Average,
    MaxNorm,
    TaskArithmetic,
    DareFrom,
    DareTaskArithmetic,
    RegMean,
}

impl MergeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeMethod::From => "from",
            MergeMethod::Average => "average",
            MergeMethod::MaxNorm => "max_norm",
            MergeMethod::TaskArithmetic => "task_arithmetic",
            MergeMethod::DareFrom => "dare_from",
            MergeMethod::DareTaskArithmetic => "dare_task_arithmetic",
            MergeMethod::RegMean => "regmean",
        }
    }
}

impl std::str::FromStr for MergeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "from" => Ok(MergeMethod::From),
            "average" => Ok(MergeMethod::Average),
            "max_norm" => Ok(MergeMethod::MaxNorm),
            "task_arithmetic" => Ok(MergeMethod::TaskArithmetic),
            "dare_from" => Ok(MergeMethod::DareFrom),
            "dare_task_arithmetic" => Ok(MergeMethod::DareTaskArithmetic),
            "regmean" => Ok(MergeMethod::RegMean),
            other => Err(Error::Validation(format!("unknown merge method \"{other}\""))),
        }
    }
}

/// Whether norm weights are computed per layer or once per model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerTensor,
    WholeModel,
}

impl std::str::FromStr for NormScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-tensor" | "per_tensor" => Ok(NormScope::PerTensor),
            "whole-model" | "whole_model" => Ok(NormScope::WholeModel),
            other => Err(Error::Validation(format!("unknown norm scope \"{other}\""))),
        }
    }
}

/// Settings for merging fully fine-tuned models.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergeConfig {
    pub method: MergeMethod,
    /// Norm exponent of the weighting (`wᵢ = ‖θᵢ‖_F^k`).
    pub k: f64,
    /// Linear coefficient applied to the merged delta.
    pub alpha: f64,
    pub norm_scope: NormScope,
    /// Drop probability for the DARE variants.
    pub dare_drop_p: f64,
    pub seed: u64,
    pub rcond: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            method: MergeMethod::From,
            k: 1.0,
            alpha: 1.0,
            norm_scope: NormScope::PerTensor,
            dare_drop_p: 0.5,
            seed: 0,
            rcond: crate::linalg::DEFAULT_RCOND,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0) {
            return Err(Error::Validation(format!("k must be >= 0, got {}", self.k)));
        }
        if !(0.0..1.0).contains(&self.dare_drop_p) {
            return Err(Error::Validation(format!(
                "dare_drop_p must lie in [0, 1), got {}",
                self.dare_drop_p
            )));
        }
        if !(self.rcond > 0.0 && self.rcond < 1.0) {
            return Err(Error::Validation(format!(
                "rcond must lie in (0, 1), got {}",
                self.rcond
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Validation(format!(
                "alpha must be finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-layer observability of a merge.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    /// Frobenius norm of each model's delta for this layer.
    pub norms: Vec<f64>,
    /// Per-model linear coefficients applied, normalized to sum to one for
    /// the norm-weighted methods.
    pub weights: Vec<f64>,
    pub method: String,
    /// True when every weight vanished and the layer fell back to a
    /// simple average.
    pub fallback_average: bool,
}

/// Merge observability: per-layer weights plus the configuration echo.
/// Wall-clock timing stays in memory (and in the log) so that serialized
/// reports are byte-deterministic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergeReport {
    pub layers: Vec<LayerReport>,
    pub config: MergeConfig,
    #[serde(skip)]
    pub elapsed_ms: f64,
}

/// Subtract `base` from `finetuned` layer by layer.
pub fn extract_task_vector(base: &Checkpoint, finetuned: &Checkpoint) -> Result<TaskVector> {
    let mut offending: Vec<String> = Vec::new();
    for name in base.names() {
        match finetuned.get(name) {
            None => offending.push(format!("{name} (missing from fine-tuned model)")),
            Some(entry) => {
                if entry.shape != base.get(name).expect("iterating base").shape {
                    offending.push(format!("{name} (shape mismatch)"));
                }
            }
        }
    }
    for name in finetuned.names() {
        if base.get(name).is_none() {
            offending.push(format!("{name} (missing from base model)"));
        }
    }
    if !offending.is_empty() {
        offending.sort();
        return Err(Error::Validation(format!(
            "base and fine-tuned checkpoints disagree on layers: {}",
            offending.join(", ")
        )));
    }
    let mut deltas = BTreeMap::new();
    for (name, entry) in &finetuned.tensors {
        let base_entry = base.get(name).expect("validated above");
        deltas.insert(name.clone(), entry.tensor.sub(&base_entry.tensor)?);
    }
    Ok(TaskVector {
        deltas,
        source_label: finetuned.metadata.get("name").cloned().unwrap_or_default(),
    })
}

fn validate_same_layers(vectors: &[TaskVector]) -> Result<Vec<String>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Validation("at least one task vector is required".into()))?;
    let names: Vec<String> = first.layer_names().cloned().collect();
    for (i, v) in vectors.iter().enumerate().skip(1) {
        let mut offending = Vec::new();
        for name in &names {
            match v.deltas.get(name) {
                None => offending.push(name.clone()),
                Some(t) if t.shape() != first.deltas[name].shape() => offending.push(name.clone()),
                _ => {}
            }
        }
        for name in v.layer_names() {
            if !first.deltas.contains_key(name) {
                offending.push(name.clone());
            }
        }
        if !offending.is_empty() {
            offending.sort();
            offending.dedup();
            return Err(Error::Validation(format!(
                "task vector {i} disagrees with task vector 0 on layers: {}",
                offending.join(", ")
            )));
        }
    }
    Ok(names)
}

/// Norm-power weights. Weights are computed relative to the largest norm so
/// that extreme `k` cannot overflow; normalization cancels the scaling.
/// Returns `(weights, fell_back_to_average)`.
fn norm_weights(norms: &[f64], k: f64) -> (Vec<f64>, bool) {
    // 0^0 is taken as 1: the k→0 limit is the plain average for every input.
    if k == 0.0 {
        return (vec![1.0; norms.len()], false);
    }
    let max = norms.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return (vec![1.0; norms.len()], true);
    }
    (norms.iter().map(|n| (n / max).powf(k)).collect(), false)
}

fn weighted_mean(tensors: &[&Tensor2D], weights: &[f64]) -> Result<Tensor2D> {
    let total: f64 = weights.iter().sum();
    let terms: Vec<(f64, &Tensor2D)> = tensors
        .iter()
        .zip(weights)
        .map(|(t, w)| (w / total, *t))
        .collect();
    Tensor2D::weighted_sum(&terms)
}

/// Closed-form norm-weighted merge.
///
/// Per scope unit the result is `Σ wᵢ θᵢ / Σ wᵢ` with `wᵢ = ‖θᵢ‖_F^k`,
/// the exact minimizer of the weighted squared-distance objective. A layer
/// whose weights all vanish (possible only for `k > 0`) falls back to the
/// simple average, flagged in the report.
pub fn from_merge(
    vectors: &[TaskVector],
    k: f64,
    norm_scope: NormScope,
) -> Result<(TaskVector, MergeReport)> {
    if !(k >= 0.0) {
        return Err(Error::Validation(format!("k must be >= 0, got {k}")));
    }
    let start = std::time::Instant::now();
    let names = validate_same_layers(vectors)?;

    let model_weights = match norm_scope {
        NormScope::WholeModel => {
            let norms: Vec<f64> = vectors.iter().map(TaskVector::model_norm).collect();
            Some((norms.clone(), norm_weights(&norms, k)))
        }
        NormScope::PerTensor => None,
    };

    let per_layer: Vec<(String, Tensor2D, LayerReport)> = names
        .par_iter()
        .map(|name| -> Result<(String, Tensor2D, LayerReport)> {
            let tensors: Vec<&Tensor2D> = vectors.iter().map(|v| &v.deltas[name]).collect();
            let layer_norms: Vec<f64> =
                tensors.iter().map(|t| t.frobenius_norm()).collect();
            let (norms, (weights, fallback)) = match &model_weights {
                Some((model_norms, (w, f))) => (model_norms.clone(), (w.clone(), *f)),
                None => (layer_norms.clone(), norm_weights(&layer_norms, k)),
            };
            let merged = weighted_mean(&tensors, &weights)?;
            let total: f64 = weights.iter().sum();
            let report = LayerReport {
                layer: name.clone(),
                norms,
                weights: weights.iter().map(|w| w / total).collect(),
                method: MergeMethod::From.as_str().to_string(),
                fallback_average: fallback,
            };
            Ok((name.clone(), merged, report))
        })
        .collect::<Result<_>>()?;

    let mut deltas = BTreeMap::new();
    let mut layers = Vec::with_capacity(per_layer.len());
    for (name, merged, report) in per_layer {
        deltas.insert(name, merged);
        layers.push(report);
    }
    layers.sort_by(|a, b| a.layer.cmp(&b.layer));

    let report = MergeReport {
        layers,
        config: MergeConfig {
            method: MergeMethod::From,
            k,
            norm_scope,
            ..MergeConfig::default()
        },
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((
        TaskVector {
            deltas,
            source_label: "merged".into(),
        },
        report,
    ))
}

/// Pick the largest-norm task vector per scope unit, breaking ties toward
/// the lowest model index.
pub fn max_norm_select(vectors: &[TaskVector], norm_scope: NormScope) -> Result<TaskVector> {
    fn argmax(norms: &[f64]) -> usize {
        let mut best = 0;
        for (i, n) in norms.iter().enumerate().skip(1) {
            if *n > norms[best] {
                best = i;
            }
        }
        best
    }

    let names = validate_same_layers(vectors)?;
    let mut deltas = BTreeMap::new();
    match norm_scope {
        NormScope::WholeModel => {
            let norms: Vec<f64> = vectors.iter().map(TaskVector::model_norm).collect();
            let winner = argmax(&norms);
            for name in names {
                deltas.insert(name.clone(), vectors[winner].deltas[&name].clone());
            }
        }
        NormScope::PerTensor => {
            for name in names {
                let norms: Vec<f64> = vectors
                    .iter()
                    .map(|v| v.deltas[&name].frobenius_norm())
                    .collect();
                let winner = argmax(&norms);
                deltas.insert(name.clone(), vectors[winner].deltas[&name].clone());
            }
        }
    }
    Ok(TaskVector {
        deltas,
        source_label: "max_norm".into(),
    })
}

/// Uniform average of the task vectors.
pub fn average_merge(vectors: &[TaskVector]) -> Result<TaskVector> {
    let names = validate_same_layers(vectors)?;
    let w = vec![1.0; vectors.len()];
    let mut deltas = BTreeMap::new();
    for name in names {
        let tensors: Vec<&Tensor2D> = vectors.iter().map(|v| &v.deltas[&name]).collect();
        deltas.insert(name.clone(), weighted_mean(&tensors, &w)?);
    }
    Ok(TaskVector {
        deltas,
        source_label: "average".into(),
    })
}

/// Scaled sum of task vectors: `α · Σᵢ θᵢ` per layer.
pub fn task_arithmetic_merge(vectors: &[TaskVector], alpha: f64) -> Result<TaskVector> {
    let names = validate_same_layers(vectors)?;
    let mut deltas = BTreeMap::new();
    for name in names {
        let terms: Vec<(f64, &Tensor2D)> =
            vectors.iter().map(|v| (alpha, &v.deltas[&name])).collect();
        deltas.insert(name.clone(), Tensor2D::weighted_sum(&terms)?);
    }
    Ok(TaskVector {
        deltas,
        source_label: "task_arithmetic".into(),
    })
}

/// Randomly drop delta entries with probability `drop_p` and rescale the
/// survivors by `1/(1-drop_p)`, preserving the elementwise expectation.
/// The mask stream is keyed by `(seed, layer name)`, so results do not
/// depend on layer processing order.
pub fn dare_transform(v: &TaskVector, drop_p: f64, seed: u64) -> Result<TaskVector> {
    if !(0.0..1.0).contains(&drop_p) {
        return Err(Error::Validation(format!(
            "drop probability must lie in [0, 1), got {drop_p}"
        )));
    }
    if drop_p == 0.0 {
        return Ok(v.clone());
    }
    let scale = 1.0 / (1.0 - drop_p);
    let deltas = v
        .deltas
        .iter()
        .map(|(name, t)| {
            let mut rng = stream_rng(seed, name.as_bytes());
            let data = t
                .data()
                .iter()
                .map(|&x| {
                    if rng.random::<f64>() < drop_p {
                        0.0
                    } else {
                        x * scale
                    }
                })
                .collect();
            let out = Tensor2D::from_vec(t.rows(), t.cols(), data).expect("same length");
            (name.clone(), out)
        })
        .collect();
    Ok(TaskVector {
        deltas,
        source_label: v.source_label.clone(),
    })
}

/// Closed-form merge of one linear layer from per-model Gram matrices:
/// `W* = (Σ Gᵢ)⁺ (Σ Gᵢ Wᵢ)`.
pub fn regmean_merge(weights: &[Tensor2D], grams: &[Tensor2D], rcond: f64) -> Result<Tensor2D> {
    if weights.is_empty() || weights.len() != grams.len() {
        return Err(Error::Validation(format!(
            "regmean needs one gram matrix per model, got {} weights and {} grams",
            weights.len(),
            grams.len()
        )));
    }
    let shape = weights[0].shape();
    for (i, (w, g)) in weights.iter().zip(grams).enumerate() {
        if w.shape() != shape {
            return Err(Error::Validation(format!(
                "weight {i} has shape {}x{}, expected {}x{}",
                w.rows(),
                w.cols(),
                shape.0,
                shape.1
            )));
        }
        if g.rows() != g.cols() || g.rows() != w.rows() {
            return Err(Error::Validation(format!(
                "gram {i} must be square with dimension {} (the layer input size), got {}x{}",
                w.rows(),
                g.rows(),
                g.cols()
            )));
        }
        let asym = (0..g.rows())
            .flat_map(|r| (0..r).map(move |c| (r, c)))
            .map(|(r, c)| (g.get(r, c) - g.get(c, r)).abs())
            .fold(0.0, f64::max);
        if asym > 1e-8 {
            return Err(Error::Validation(format!(
                "gram {i} is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
    }
    let gram_terms: Vec<(f64, &Tensor2D)> = grams.iter().map(|g| (1.0, g)).collect();
    let gram_sum = Tensor2D::weighted_sum(&gram_terms)?;
    let mut gw_sum = Tensor2D::zeros(shape.0, shape.1);
    for (w, g) in weights.iter().zip(grams) {
        let gw = g.matmul(w)?;
        gw_sum = gw_sum.add(&gw)?;
    }
    gram_sum.pinv(rcond)?.matmul(&gw_sum)
}

/// RegMean over whole checkpoints. Each model brings its own Gram
/// container whose tensor names mirror the layer names; layers without a
/// Gram matrix in every container are averaged instead, which the report
/// records per layer.
pub fn regmean_merge_checkpoints(
    models: &[Checkpoint],
    grams: &[Checkpoint],
    rcond: f64,
) -> Result<(Checkpoint, MergeReport)> {
    let start = std::time::Instant::now();
    if models.is_empty() || models.len() != grams.len() {
        return Err(Error::Validation(format!(
            "regmean needs one gram container per model, got {} models and {} gram containers",
            models.len(),
            grams.len()
        )));
    }
    let first = &models[0];
    for (i, m) in models.iter().enumerate().skip(1) {
        let same = m.len() == first.len()
            && m.tensors
                .iter()
                .zip(&first.tensors)
                .all(|((an, a), (bn, b))| an == bn && a.shape == b.shape);
        if !same {
            return Err(Error::Validation(format!(
                "model {i} disagrees with model 0 on tensor names or shapes"
            )));
        }
    }

    let mut out = first.clone();
    let mut layers = Vec::new();
    for (name, entry) in &first.tensors {
        let tensors: Vec<&Tensor2D> = models.iter().map(|m| &m.tensors[name].tensor).collect();
        let gram_hits = grams.iter().filter(|g| g.get(name).is_some()).count();
        let (merged, method) = if gram_hits == grams.len() {
            let gram_mats: Vec<Tensor2D> = grams
                .iter()
                .map(|g| g.tensors[name].tensor.clone())
                .collect();
            let weights: Vec<Tensor2D> = tensors.iter().map(|t| (*t).clone()).collect();
            (
                regmean_merge(&weights, &gram_mats, rcond)?,
                MergeMethod::RegMean.as_str().to_string(),
            )
        } else if gram_hits == 0 {
            (
                weighted_mean(&tensors, &vec![1.0; tensors.len()])?,
                "average_fallback".to_string(),
            )
        } else {
            return Err(Error::Validation(format!(
                "layer \"{name}\" has a gram matrix in {gram_hits} of {} containers; \
                 provide it in all or none",
                grams.len()
            )));
        };
        let norms = tensors.iter().map(|t| t.frobenius_norm()).collect();
        layers.push(LayerReport {
            layer: name.clone(),
            norms,
            weights: vec![1.0 / models.len() as f64; models.len()],
            method,
            fallback_average: gram_hits == 0,
        });
        out.tensors.insert(
            name.clone(),
            TensorEntry {
                shape: entry.shape.clone(),
                dtype: entry.dtype,
                tensor: merged,
            },
        );
    }

    let report = MergeReport {
        layers,
        config: MergeConfig {
            method: MergeMethod::RegMean,
            rcond,
            ..MergeConfig::default()
        },
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((out, report))
}

/// Add `α · delta` onto a base checkpoint. Base layers without a delta
/// pass through unchanged.
pub fn apply_delta(base: &Checkpoint, delta: &TaskVector, alpha: f64) -> Result<Checkpoint> {
    let mut out = base.clone();
    for (name, d) in &delta.deltas {
        let entry = out.tensors.get_mut(name).ok_or_else(|| {
            Error::Validation(format!("delta layer \"{name}\" is absent from the base model"))
        })?;
        if entry.tensor.shape() != d.shape() {
            return Err(Error::Validation(format!(
                "delta layer \"{name}\" has shape {}x{} but the base tensor is {}x{}",
                d.rows(),
                d.cols(),
                entry.tensor.rows(),
                entry.tensor.cols()
            )));
        }
        entry.tensor = Tensor2D::weighted_sum(&[(1.0, &entry.tensor), (alpha, d)])?;
    }
    Ok(out)
}

/// Dispatch a merge over extracted task vectors. The returned delta is
/// pre-`α`: callers apply the linear coefficient once via [`apply_delta`].
pub fn merge_task_vectors(
    vectors: &[TaskVector],
    cfg: &MergeConfig,
) -> Result<(TaskVector, MergeReport)> {
    cfg.validate()?;
    let start = std::time::Instant::now();

    let dared;
    let (method_input, effective): (&[TaskVector], MergeMethod) = match cfg.method {
        MergeMethod::DareFrom => {
            dared = dare_all(vectors, cfg)?;
            (&dared, MergeMethod::From)
        }
        MergeMethod::DareTaskArithmetic => {
            dared = dare_all(vectors, cfg)?;
            (&dared, MergeMethod::TaskArithmetic)
        }
        m => (vectors, m),
    };

    let (merged, mut report) = match effective {
        MergeMethod::From => {
            let (v, r) = from_merge(method_input, cfg.k, cfg.norm_scope)?;
            (v, r)
        }
        MergeMethod::Average => {
            let v = average_merge(method_input)?;
            let r = uniform_report(method_input, MergeMethod::Average, cfg);
            (v, r)
        }
        MergeMethod::MaxNorm => {
            let v = max_norm_select(method_input, cfg.norm_scope)?;
            let r = selection_report(method_input, cfg);
            (v, r)
        }
        MergeMethod::TaskArithmetic => {
            let v = task_arithmetic_merge(method_input, 1.0)?;
            let r = uniform_report(method_input, MergeMethod::TaskArithmetic, cfg);
            (v, r)
        }
        MergeMethod::RegMean => {
            return Err(Error::Validation(
                "regmean operates on whole checkpoints with gram matrices; \
                 use regmean_merge_checkpoints"
                    .into(),
            ))
        }
        MergeMethod::DareFrom | MergeMethod::DareTaskArithmetic => unreachable!(),
    };

    report.config = cfg.clone();
    for layer in &mut report.layers {
        layer.method = cfg.method.as_str().to_string();
    }
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((merged, report))
}

fn dare_all(vectors: &[TaskVector], cfg: &MergeConfig) -> Result<Vec<TaskVector>> {
    vectors
        .iter()
        .map(|v| dare_transform(v, cfg.dare_drop_p, cfg.seed))
        .collect()
}

fn uniform_report(vectors: &[TaskVector], method: MergeMethod, cfg: &MergeConfig) -> MergeReport {
    let n = vectors.len();
    let layers = vectors[0]
        .layer_names()
        .map(|name| LayerReport {
            layer: name.clone(),
            norms: vectors
                .iter()
                .map(|v| v.deltas[name].frobenius_norm())
                .collect(),
            weights: vec![1.0 / n as f64; n],
            method: method.as_str().to_string(),
            fallback_average: false,
        })
        .collect();
    MergeReport {
        layers,
        config: cfg.clone(),
        elapsed_ms: 0.0,
    }
}

fn selection_report(vectors: &[TaskVector], cfg: &MergeConfig) -> MergeReport {
    let n = vectors.len();
    let model_norms: Vec<f64> = vectors.iter().map(TaskVector::model_norm).collect();
    let layers = vectors[0]
        .layer_names()
        .map(|name| {
            let norms: Vec<f64> = match cfg.norm_scope {
                NormScope::PerTensor => vectors
                    .iter()
                    .map(|v| v.deltas[name].frobenius_norm())
                    .collect(),
                NormScope::WholeModel => model_norms.clone(),
            };
            let mut winner = 0;
            for (i, m) in norms.iter().enumerate().skip(1) {
                if *m > norms[winner] {
                    winner = i;
                }
            }
            let mut weights = vec![0.0; n];
            weights[winner] = 1.0;
            LayerReport {
                layer: name.clone(),
                norms,
                weights,
                method: MergeMethod::MaxNorm.as_str().to_string(),
                fallback_average: false,
            }
        })
        .collect();
    MergeReport {
        layers,
        config: cfg.clone(),
        elapsed_ms: 0.0,
    }
}

/// Extension point for merge strategies not shipped with this crate
/// (sign-election schemes, subspace alignment, ...). Implementations take
/// the extracted task vectors and return a merged delta.
pub trait TaskVectorMerger {
    fn name(&self) -> &str;
    fn merge(&self, vectors: &[TaskVector]) -> Result<TaskVector>;
}
