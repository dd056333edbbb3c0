//! LoRA adapter files: a weights container plus a JSON config sidecar.
//!
//! Tensor naming follows `<layer>.lora_A` / `<layer>.lora_B`; a trailing
//! `.weight` suffix (as emitted by some fine-tuning stacks) is stripped on
//! read. `A` is stored as `r × d₂`, `B` as `d₁ × r`, and the effective
//! dense delta of a layer is `scaling_alpha · B · A`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_container, write_bytes_atomic, write_container, Checkpoint, Dtype};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// The low-rank factor pair of one target layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair {
    /// `d₁ × r` output-side factor.
    pub b: Tensor2D,
    /// `r × d₂` input-side factor.
    pub a: Tensor2D,
}

impl LoraPair {
    /// Dense shape `(d₁, d₂)` of the layer delta.
    pub fn dense_shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }
}

/// A LoRA adapter: one factor pair per target layer, a shared rank, and
/// the adapter's internal scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    pub layers: BTreeMap<String, LoraPair>,
    pub rank: usize,
    pub scaling_alpha: f64,
    /// Storage dtype used when the adapter is written back out.
    pub dtype: Dtype,
}

impl LoraAdapter {
    /// Effective dense delta `scaling_alpha · B · A` for one layer.
    pub fn dense_delta(&self, layer: &str) -> Result<Tensor2D> {
        let pair = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::Validation(format!("adapter has no layer \"{layer}\"")))?;
        Ok(pair.b.matmul(&pair.a)?.scale(self.scaling_alpha))
    }
}

#[derive(Serialize, Deserialize)]
struct LoraConfigFile {
    r: u64,
    lora_alpha: f64,
    target_modules: Vec<String>,
}

/// Read an adapter from a weights container and its JSON config.
pub fn read_lora(weights_path: impl AsRef<Path>, config_path: impl AsRef<Path>) -> Result<LoraAdapter> {
    let config_path = config_path.as_ref();
    let config_text =
        std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let config: LoraConfigFile = serde_json::from_str(&config_text).map_err(|e| {
        Error::Validation(format!(
            "invalid adapter config {}: {e}",
            config_path.display()
        ))
    })?;
    let rank = usize::try_from(config.r)
        .ok()
        .filter(|r| *r > 0)
        .ok_or_else(|| Error::Validation(format!("adapter rank must be positive, got {}", config.r)))?;

    let weights = read_container(weights_path)?;
    let mut a_side: BTreeMap<String, Tensor2D> = BTreeMap::new();
    let mut b_side: BTreeMap<String, Tensor2D> = BTreeMap::new();
    let mut dtype = None;
    for (name, entry) in &weights.tensors {
        let base = name.strip_suffix(".weight").unwrap_or(name);
        let (layer, side) = if let Some(layer) = base.strip_suffix(".lora_A") {
            (layer, &mut a_side)
        } else if let Some(layer) = base.strip_suffix(".lora_B") {
            (layer, &mut b_side)
        } else {
            return Err(Error::Validation(format!(
                "tensor \"{name}\" does not follow the <layer>.lora_A / <layer>.lora_B convention"
            )));
        };
        if entry.shape.len() != 2 {
            return Err(Error::Validation(format!(
                "adapter tensor \"{name}\" must be 2-D, got shape {:?}",
                entry.shape
            )));
        }
        dtype = Some(match (dtype, entry.dtype) {
            (None, d) => d,
            (Some(Dtype::F32), Dtype::F32) => Dtype::F32,
            _ => Dtype::F64,
        });
        side.insert(layer.to_string(), entry.tensor.clone());
    }

    let mut layers = BTreeMap::new();
    for (layer, a) in a_side {
        let b = b_side.remove(&layer).ok_or_else(|| {
            Error::Validation(format!("layer \"{layer}\" has lora_A but no lora_B"))
        })?;
        if a.rows() != rank || b.cols() != rank {
            return Err(Error::Validation(format!(
                "layer \"{layer}\" rank mismatch: config r={rank} but A is {}x{} and B is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        layers.insert(layer, LoraPair { b, a });
    }
    if let Some(layer) = b_side.keys().next() {
        return Err(Error::Validation(format!(
            "layer \"{layer}\" has lora_B but no lora_A"
        )));
    }
    if layers.is_empty() {
        return Err(Error::Validation("adapter contains no lora layers".into()));
    }

    Ok(LoraAdapter {
        layers,
        rank,
        scaling_alpha: config.lora_alpha,
        dtype: dtype.unwrap_or(Dtype::F64),
    })
}

/// Write an adapter: the inverse of [`read_lora`]. Byte-deterministic for
/// identical inputs.
pub fn write_lora(
    adapter: &LoraAdapter,
    weights_path: impl AsRef<Path>,
    config_path: impl AsRef<Path>,
) -> Result<()> {
    let mut ckpt = Checkpoint::new();
    for (layer, pair) in &adapter.layers {
        if pair.a.rows() != adapter.rank || pair.b.cols() != adapter.rank {
            return Err(Error::Validation(format!(
                "layer \"{layer}\" factors do not match adapter rank {}",
                adapter.rank
            )));
        }
        ckpt.insert(format!("{layer}.lora_A"), pair.a.clone(), adapter.dtype);
        ckpt.insert(format!("{layer}.lora_B"), pair.b.clone(), adapter.dtype);
    }
    write_container(&ckpt, weights_path)?;

    let config = LoraConfigFile {
        r: adapter.rank as u64,
        lora_alpha: adapter.scaling_alpha,
        target_modules: adapter.layers.keys().cloned().collect(),
    };
    let mut text = serde_json::to_vec_pretty(&config).expect("config serializes");
    text.push(b'\n');
    write_bytes_atomic(config_path.as_ref(), &text)
}
