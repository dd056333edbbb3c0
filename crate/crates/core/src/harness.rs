//! Synthetic-model generation and the desk-scale sweep driver.
//!
//! Fixtures are built with measurable ground truth: every task vector has
//! an exact Frobenius norm, an exact pairwise direction cosine, and an
//! optional exact low-rank structure. Sweeps then grade each merge method
//! geometrically (objective values and distances) over a grid of `k`
//! values, mirroring how the weighting exponent trades the simple average
//! against largest-norm selection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_bytes_atomic, Checkpoint, Dtype};
use crate::lora::{merge_lora_layer, norm_power_weights, oracle_lora_optimum, LoraMergeConfig};
use crate::merge::{
    average_merge, dare_transform, extract_task_vector, from_merge, max_norm_select,
    task_arithmetic_merge, NormScope, TaskVector,
};
use crate::rng::{seeded_normal, stream_rng};
use crate::tensor::Tensor2D;
use rand_distr::{Distribution, Normal};

/// Blueprint for one synthetic base model plus its fine-tuned variants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    /// `(name, d1, d2)` per layer.
    pub layer_shapes: Vec<(String, usize, usize)>,
    pub n_models: usize,
    /// Target `‖θᵢ‖_F` of each model's per-layer delta.
    pub norm_profile: Vec<f64>,
    /// Pairwise cosine between the task-vector directions, in `[0, 1]`.
    pub overlap: f64,
    /// When set, every delta has exactly this rank.
    pub intrinsic_rank: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            layer_shapes: vec![
                ("blocks.0.weight".into(), 16, 12),
                ("blocks.1.weight".into(), 8, 8),
            ],
            n_models: 3,
            norm_profile: vec![4.0, 2.0, 1.0],
            overlap: 0.3,
            intrinsic_rank: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_shapes.is_empty() {
            return Err(Error::Validation("at least one layer shape is required".into()));
        }
        for (name, d1, d2) in &self.layer_shapes {
            if *d1 == 0 || *d2 == 0 {
                return Err(Error::Validation(format!(
                    "layer \"{name}\" has a zero dimension"
                )));
            }
        }
        let mut names: Vec<&String> = self.layer_shapes.iter().map(|(n, _, _)| n).collect();
        names.sort();
        names.dedup();
        if names.len() != self.layer_shapes.len() {
            return Err(Error::Validation("layer names must be unique".into()));
        }
        if self.n_models == 0 {
            return Err(Error::Validation("n_models must be positive".into()));
        }
        if self.norm_profile.len() != self.n_models {
            return Err(Error::Validation(format!(
                "norm_profile has {} entries but n_models is {}",
                self.norm_profile.len(),
                self.n_models
            )));
        }
        if self.norm_profile.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
            return Err(Error::Validation("norm_profile entries must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Validation(format!(
                "overlap must lie in [0, 1], got {}",
                self.overlap
            )));
        }
        if let Some(r) = self.intrinsic_rank {
            if r == 0 {
                return Err(Error::Validation("intrinsic_rank must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Generated fixtures: the base checkpoint, one fine-tuned checkpoint per
/// model, and the exactly constructed deltas the fine-tunes were built from.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub base: Checkpoint,
    pub finetuned: Vec<Checkpoint>,
    pub deltas: Vec<TaskVector>,
}

/// Orthonormal set of `count` vectors in `R^dim` (modified Gram-Schmidt
/// with re-orthogonalization over seeded gaussian draws).
fn orthonormal_vectors(dim: usize, count: usize, seed: u64, label: &str) -> Result<Vec<Vec<f64>>> {
    if count > dim {
        return Err(Error::Validation(format!(
            "cannot build {count} orthonormal directions in dimension {dim}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit sigma");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        let mut accepted = false;
        for attempt in 0..8 {
            let mut rng = stream_rng(seed, format!("{label}/{j}/{attempt}").as_bytes());
            let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            for _ in 0..2 {
                for b in &basis {
                    let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= dot * y;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 * (dim as f64).sqrt() {
                for x in &mut v {
                    *x /= norm;
                }
                basis.push(v);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Numeric(format!(
                "failed to draw {count} independent directions in dimension {dim}"
            )));
        }
    }
    Ok(basis)
}

/// Unit-norm delta directions with exact pairwise cosine `overlap`, one per
/// model, as flattened `d1·d2` vectors reshaped into matrices.
fn dense_directions(
    d1: usize,
    d2: usize,
    n: usize,
    overlap: f64,
    seed: u64,
    label: &str,
) -> Result<Vec<Tensor2D>> {
    let dim = d1 * d2;
    let to_tensor = |v: Vec<f64>| Tensor2D::from_vec(d1, d2, v).expect("dim matches");
    if overlap == 1.0 {
        let common = orthonormal_vectors(dim, 1, seed, label)?.remove(0);
        return Ok((0..n).map(|_| to_tensor(common.clone())).collect());
    }
    if overlap == 0.0 {
        let basis = orthonormal_vectors(dim, n, seed, label)?;
        return Ok(basis.into_iter().map(to_tensor).collect());
    }
    let basis = orthonormal_vectors(dim, n + 1, seed, label).map_err(|e| {
        Error::Validation(format!(
            "infeasible overlap for {n} models in a {d1}x{d2} layer: {e}"
        ))
    })?;
    let (c_part, o_part) = (overlap.sqrt(), (1.0 - overlap).sqrt());
    let common = &basis[0];
    Ok((1..=n)
        .map(|i| {
            let v: Vec<f64> = common
                .iter()
                .zip(&basis[i])
                .map(|(c, o)| c_part * c + o_part * o)
                .collect();
            to_tensor(v)
        })
        .collect())
}

/// Unit-norm rank-`r` directions with exact pairwise cosine `overlap`:
/// a shared orthonormal left factor combined with per-model right factors
/// mixed against a common block, so every direction has exactly rank `r`.
fn low_rank_directions(
    d1: usize,
    d2: usize,
    n: usize,
    rank: usize,
    overlap: f64,
    seed: u64,
    label: &str,
) -> Result<Vec<Tensor2D>> {
    if rank > d1.min(d2) {
        return Err(Error::Validation(format!(
            "intrinsic_rank {rank} exceeds min(d1, d2) = {} for a {d1}x{d2} layer",
            d1.min(d2)
        )));
    }
    let right_count = match overlap {
        o if o == 1.0 => rank,
        o if o == 0.0 => n * rank,
        _ => (n + 1) * rank,
    };
    let infeasible = |e: Error| {
        Error::Validation(format!(
            "infeasible overlap/rank combination for {n} models at rank {rank} \
             in a {d1}x{d2} layer: {e}"
        ))
    };
    let left = orthonormal_vectors(d1, rank, seed, &format!("{label}/left")).map_err(infeasible)?;
    let right =
        orthonormal_vectors(d2, right_count, seed, &format!("{label}/right")).map_err(infeasible)?;

    let scale = 1.0 / (rank as f64).sqrt();
    let (c_part, o_part) = (overlap.sqrt(), (1.0 - overlap).sqrt());
    let mut dirs = Vec::with_capacity(n);
    for i in 0..n {
        // Right factor column l of model i.
        let col = |l: usize| -> Vec<f64> {
            if overlap == 1.0 {
                right[l].clone()
            } else if overlap == 0.0 {
                right[i * rank + l].clone()
            } else {
                right[l]
                    .iter()
                    .zip(&right[(i + 1) * rank + l])
                    .map(|(c, o)| c_part * c + o_part * o)
                    .collect()
            }
        };
        let cols: Vec<Vec<f64>> = (0..rank).map(col).collect();
        let dir = Tensor2D::from_fn(d1, d2, |a, b| {
            (0..rank).map(|l| left[l][a] * cols[l][b]).sum::<f64>() * scale
        });
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Build the synthetic base model and its fine-tuned variants.
///
/// Each fine-tuned checkpoint is `base + θᵢ` where `θᵢ` has exactly the
/// requested per-layer norm, pairwise direction cosine, and (optionally)
/// rank.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut base = Checkpoint::new();
    base.metadata.insert("name".into(), "synth-base".into());
    let mut deltas: Vec<TaskVector> = (0..spec.n_models)
        .map(|i| TaskVector {
            deltas: Default::default(),
            source_label: format!("synth-model-{i}"),
        })
        .collect();

    for (name, d1, d2) in &spec.layer_shapes {
        let base_tensor = seeded_normal(*d1, *d2, 1.0, spec.seed, format!("synth/{name}/base").as_bytes());
        base.insert(name.clone(), base_tensor, Dtype::F64);

        let label = format!("synth/{name}/dir");
        let dirs = match spec.intrinsic_rank {
            Some(rank) => low_rank_directions(
                *d1,
                *d2,
                spec.n_models,
                rank,
                spec.overlap,
                spec.seed,
                &label,
            )?,
            None => dense_directions(*d1, *d2, spec.n_models, spec.overlap, spec.seed, &label)?,
        };
        for (i, dir) in dirs.into_iter().enumerate() {
            // Rescale to the exact target norm, absorbing any residual
            // orthonormalization drift.
            let target = spec.norm_profile[i];
            let theta = dir.scale(target / dir.frobenius_norm());
            deltas[i].deltas.insert(name.clone(), theta);
        }
    }

    let mut finetuned = Vec::with_capacity(spec.n_models);
    for (i, delta) in deltas.iter().enumerate() {
        let mut model = crate::merge::apply_delta(&base, delta, 1.0)?;
        model
            .metadata
            .insert("name".into(), format!("synth-model-{i}"));
        finetuned.push(model);
    }
    Ok(SynthOutput {
        base,
        finetuned,
        deltas,
    })
}

/// Methods a sweep can grade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    From,
    Average,
    TaskArithmetic,
    MaxNorm,
    DareFrom,
    DareTaskArithmetic,
    LoraFrom,
}

impl SweepMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMethod::From => "from",
            SweepMethod::Average => "average",
            SweepMethod::TaskArithmetic => "task_arithmetic",
            SweepMethod::MaxNorm => "max_norm",
            SweepMethod::DareFrom => "dare_from",
            SweepMethod::DareTaskArithmetic => "dare_task_arithmetic",
            SweepMethod::LoraFrom => "lora_from",
        }
    }
}

impl std::str::FromStr for SweepMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "from" => Ok(SweepMethod::From),
            "average" => Ok(SweepMethod::Average),
            "task_arithmetic" => Ok(SweepMethod::TaskArithmetic),
            "max_norm" => Ok(SweepMethod::MaxNorm),
            "dare_from" => Ok(SweepMethod::DareFrom),
            "dare_task_arithmetic" => Ok(SweepMethod::DareTaskArithmetic),
            "lora_from" => Ok(SweepMethod::LoraFrom),
            other => Err(Error::Validation(format!("unknown sweep method \"{other}\""))),
        }
    }
}

/// The grid used throughout: 0 plus integer powers of two from 2⁻³ to 2³.
pub fn default_k_grid() -> Vec<f64> {
    vec![0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}

pub fn default_sweep_methods() -> Vec<SweepMethod> {
    vec![
        SweepMethod::From,
        SweepMethod::Average,
        SweepMethod::TaskArithmetic,
        SweepMethod::MaxNorm,
    ]
}

/// Fixed (non-swept) settings of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub seed: u64,
    pub alpha: f64,
    pub norm_scope: NormScope,
    pub dare_drop_p: f64,
    pub rcond: f64,
    pub lora_rank: usize,
    pub lora_max_iters: usize,
    pub lora_init_sigma: f64,
    pub lora_loss_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 0,
            alpha: 1.0,
            norm_scope: NormScope::PerTensor,
            dare_drop_p: 0.5,
            rcond: crate::linalg::DEFAULT_RCOND,
            lora_rank: 2,
            lora_max_iters: 100,
            lora_init_sigma: 0.02,
            lora_loss_tol: 0.0,
        }
    }
}

/// Per-model numbers inside one (layer, method, k) cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model_index: usize,
    /// `‖θᵢ‖_F` of the original (pre-transform) delta for this layer.
    pub norm: f64,
    /// Normalized coefficient the method applied to this model.
    pub weight: f64,
    /// `‖θ* − θᵢ‖_F²` against the merged layer.
    pub loss_vs_model: f64,
}

/// Metrics of one layer within a sweep cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer: String,
    pub models: Vec<ModelMetrics>,
    /// Norm-weighted objective `Σᵢ ‖θᵢ‖^k ‖θ* − θᵢ‖²` at this cell's k.
    pub loss_eq1: f64,
    /// Frobenius distance from the merged layer to the simple average.
    pub distance_to_mean: f64,
    /// Index of the largest-norm model (ties toward the lowest index).
    pub max_norm_index: usize,
    pub lora_final_loss: Option<f64>,
    pub lora_oracle_loss: Option<f64>,
    pub stop_reason: Option<String>,
}

/// One (method, k) grid cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    pub k: f64,
    /// Set when the cell's merge failed; the sweep itself continues.
    pub error: Option<String>,
    pub layers: Vec<LayerMetrics>,
}

/// Complete sweep grid. Every (method, k) combination has a cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub k_grid: Vec<f64>,
    pub methods: Vec<String>,
    pub layers: Vec<String>,
    pub n_models: usize,
    pub config: SweepConfig,
    pub cells: Vec<SweepCell>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn normalized_norm_weights(norms: &[f64], k: f64) -> Vec<f64> {
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let raw: Vec<f64> = if k == 0.0 || max == 0.0 {
        vec![1.0; norms.len()]
    } else {
        norms.iter().map(|n| (n / max).powf(k)).collect()
    };
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

struct CellOutcome {
    merged: std::collections::BTreeMap<String, Tensor2D>,
    weights_per_layer: std::collections::BTreeMap<String, Vec<f64>>,
    lora: std::collections::BTreeMap<String, (f64, f64, String)>,
}

fn run_cell(
    vectors: &[TaskVector],
    method: SweepMethod,
    k: f64,
    cfg: &SweepConfig,
) -> Result<CellOutcome> {
    let names: Vec<String> = vectors[0].layer_names().cloned().collect();
    let mut weights_per_layer = std::collections::BTreeMap::new();
    let mut lora = std::collections::BTreeMap::new();

    let from_weights = |vs: &[TaskVector]| {
        names
            .iter()
            .map(|name| {
                let norms: Vec<f64> = vs.iter().map(|v| v.deltas[name].frobenius_norm()).collect();
                (name.clone(), normalized_norm_weights(&norms, k))
            })
            .collect::<std::collections::BTreeMap<_, _>>()
    };

    let merged: TaskVector = match method {
        SweepMethod::From => {
            weights_per_layer = from_weights(vectors);
            from_merge(vectors, k, cfg.norm_scope)?.0
        }
        SweepMethod::Average => {
            let n = vectors.len() as f64;
            for name in &names {
                weights_per_layer.insert(name.clone(), vec![1.0 / n; vectors.len()]);
            }
            average_merge(vectors)?
        }
        SweepMethod::TaskArithmetic => {
            let n = vectors.len() as f64;
            for name in &names {
                weights_per_layer.insert(name.clone(), vec![1.0 / n; vectors.len()]);
            }
            task_arithmetic_merge(vectors, cfg.alpha)?
        }
        SweepMethod::MaxNorm => {
            for name in &names {
                let norms: Vec<f64> =
                    vectors.iter().map(|v| v.deltas[name].frobenius_norm()).collect();
                let mut w = vec![0.0; vectors.len()];
                w[argmax(&norms)] = 1.0;
                weights_per_layer.insert(name.clone(), w);
            }
            max_norm_select(vectors, cfg.norm_scope)?
        }
        SweepMethod::DareFrom | SweepMethod::DareTaskArithmetic => {
            let dared: Vec<TaskVector> = vectors
                .iter()
                .map(|v| dare_transform(v, cfg.dare_drop_p, cfg.seed))
                .collect::<Result<_>>()?;
            if method == SweepMethod::DareFrom {
                weights_per_layer = from_weights(&dared);
                from_merge(&dared, k, cfg.norm_scope)?.0
            } else {
                let n = vectors.len() as f64;
                for name in &names {
                    weights_per_layer.insert(name.clone(), vec![1.0 / n; vectors.len()]);
                }
                task_arithmetic_merge(&dared, cfg.alpha)?
            }
        }
        SweepMethod::LoraFrom => {
            weights_per_layer = from_weights(vectors);
            let lora_cfg = LoraMergeConfig {
                k,
                rank_out: cfg.lora_rank,
                max_iters: cfg.lora_max_iters,
                init_sigma: cfg.lora_init_sigma,
                seed: cfg.seed,
                rcond: cfg.rcond,
                loss_tol: cfg.lora_loss_tol,
            };
            let mut deltas = std::collections::BTreeMap::new();
            for name in &names {
                let thetas: Vec<Tensor2D> =
                    vectors.iter().map(|v| v.deltas[name].clone()).collect();
                let (b, a, trace) = merge_lora_layer(&thetas, &lora_cfg, name)?;
                let w = norm_power_weights(&thetas, k);
                let (_, oracle_loss) = oracle_lora_optimum(&thetas, &w, cfg.lora_rank)?;
                lora.insert(
                    name.clone(),
                    (
                        trace.final_loss,
                        oracle_loss,
                        trace.stop_reason.as_str().to_string(),
                    ),
                );
                deltas.insert(name.clone(), b.matmul(&a)?);
            }
            TaskVector {
                deltas,
                source_label: "lora_from".into(),
            }
        }
    };

    Ok(CellOutcome {
        merged: merged.deltas,
        weights_per_layer,
        lora,
    })
}

/// Run every method at every k over the extracted task vectors of the
/// given fine-tuned models. Per-cell failures are recorded in the cell
/// rather than aborting the sweep.
pub fn sweep_k(
    base: &Checkpoint,
    finetuned: &[Checkpoint],
    k_grid: &[f64],
    methods: &[SweepMethod],
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    if k_grid.is_empty() {
        return Err(Error::Validation("k grid must be non-empty".into()));
    }
    if methods.is_empty() {
        return Err(Error::Validation("method list must be non-empty".into()));
    }
    if k_grid.iter().any(|k| !(*k >= 0.0)) {
        return Err(Error::Validation("k grid entries must be >= 0".into()));
    }
    let vectors: Vec<TaskVector> = finetuned
        .iter()
        .map(|m| extract_task_vector(base, m))
        .collect::<Result<_>>()?;
    if vectors.is_empty() {
        return Err(Error::Validation("at least one fine-tuned model is required".into()));
    }
    let names: Vec<String> = vectors[0].layer_names().cloned().collect();
    let mean = average_merge(&vectors)?;

    let mut cells = Vec::with_capacity(methods.len() * k_grid.len());
    for method in methods {
        for &k in k_grid {
            let cell = match run_cell(&vectors, *method, k, cfg) {
                Err(e) => SweepCell {
                    method: method.as_str().to_string(),
                    k,
                    error: Some(e.to_string()),
                    layers: Vec::new(),
                },
                Ok(outcome) => {
                    let layers = names
                        .iter()
                        .map(|name| {
                            let norms: Vec<f64> = vectors
                                .iter()
                                .map(|v| v.deltas[name].frobenius_norm())
                                .collect();
                            let merged = &outcome.merged[name];
                            let losses: Vec<f64> = vectors
                                .iter()
                                .map(|v| {
                                    merged
                                        .sq_frobenius_distance(&v.deltas[name])
                                        .expect("same fixture shapes")
                                })
                                .collect();
                            let loss_eq1 = norms
                                .iter()
                                .zip(&losses)
                                .map(|(n, l)| if k == 0.0 { *l } else { n.powf(k) * l })
                                .sum();
                            let weights = &outcome.weights_per_layer[name];
                            let models = (0..vectors.len())
                                .map(|i| ModelMetrics {
                                    model_index: i,
                                    norm: norms[i],
                                    weight: weights[i],
                                    loss_vs_model: losses[i],
                                })
                                .collect();
                            let (lora_final_loss, lora_oracle_loss, stop_reason) =
                                match outcome.lora.get(name) {
                                    Some((f, o, s)) => (Some(*f), Some(*o), Some(s.clone())),
                                    None => (None, None, None),
                                };
                            LayerMetrics {
                                layer: name.clone(),
                                models,
                                loss_eq1,
                                distance_to_mean: merged
                                    .sub(&mean.deltas[name])
                                    .expect("same fixture shapes")
                                    .frobenius_norm(),
                                max_norm_index: argmax(&norms),
                                lora_final_loss,
                                lora_oracle_loss,
                                stop_reason,
                            }
                        })
                        .collect();
                    SweepCell {
                        method: method.as_str().to_string(),
                        k,
                        error: None,
                        layers,
                    }
                }
            };
            cells.push(cell);
        }
    }

    Ok(SweepResult {
        k_grid: k_grid.to_vec(),
        methods: methods.iter().map(|m| m.as_str().to_string()).collect(),
        layers: names,
        n_models: vectors.len(),
        config: cfg.clone(),
        cells,
    })
}

/// CSV header of the flat report, one row per (layer, method, k) with the
/// max-norm model's numbers.
pub const CSV_HEADER: [&str; 11] = [
    "layer",
    "method",
    "k",
    "model_index",
    "norm",
    "weight",
    "loss_vs_model",
    "loss_eq1",
    "lora_final_loss",
    "lora_oracle_loss",
    "stop_reason",
];

/// Write CSV and JSON renditions of a sweep next to `stem` (its extension,
/// if any, is replaced by `.csv` / `.json`). Byte-deterministic.
pub fn emit_report(result: &SweepResult, stem: &Path) -> Result<()> {
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| Error::Validation(format!("csv encoding failed: {e}")))?;
    let fmt = |v: f64| format!("{v}");
    for cell in &result.cells {
        if cell.error.is_some() {
            for layer in &result.layers {
                writer
                    .write_record([
                        layer.as_str(),
                        &cell.method,
                        &fmt(cell.k),
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        "failed",
                    ])
                    .map_err(|e| Error::Validation(format!("csv encoding failed: {e}")))?;
            }
            continue;
        }
        for layer in &cell.layers {
            let m = &layer.models[layer.max_norm_index];
            writer
                .write_record([
                    layer.layer.as_str(),
                    &cell.method,
                    &fmt(cell.k),
                    &m.model_index.to_string(),
                    &fmt(m.norm),
                    &fmt(m.weight),
                    &fmt(m.loss_vs_model),
                    &fmt(layer.loss_eq1),
                    &layer.lora_final_loss.map(fmt).unwrap_or_default(),
                    &layer.lora_oracle_loss.map(fmt).unwrap_or_default(),
                    layer.stop_reason.as_deref().unwrap_or(""),
                ])
                .map_err(|e| Error::Validation(format!("csv encoding failed: {e}")))?;
        }
    }
    let csv_bytes = writer
        .into_inner()
        .map_err(|e| Error::Validation(format!("csv encoding failed: {e}")))?;
    write_bytes_atomic(&csv_path, &csv_bytes)?;

    let mut json_bytes = serde_json::to_vec_pretty(result).expect("sweep result serializes");
    json_bytes.push(b'\n');
    write_bytes_atomic(&json_path, &json_bytes)
}
