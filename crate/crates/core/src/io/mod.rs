//! Checkpoint containers and LoRA adapter sidecars.
//!
//! The container layout is the common "header length + JSON header + raw
//! payload" format used for tensor checkpoints: bytes 0–7 hold an unsigned
//! 64-bit little-endian header length `N`, bytes `8..8+N` a UTF-8 JSON
//! object mapping tensor names to `{"dtype", "shape", "data_offsets"}`
//! (plus an optional `"__metadata__"` string map), and the rest the raw
//! little-endian row-major tensor payloads, addressed relative to the end
//! of the header.

mod adapter;
mod container;

pub use adapter::{read_lora, write_lora, LoraAdapter, LoraPair};
pub use container::{encode_container, parse_container, read_container, write_container};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Storage dtype of a tensor on disk. Computation is always `f64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn byte_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One named tensor inside a checkpoint: the `f64` working matrix plus the
/// original shape and storage dtype needed for a faithful round trip.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    /// Shape as recorded in the file; may have any rank.
    pub shape: Vec<usize>,
    /// Storage dtype in the file.
    pub dtype: Dtype,
    /// Working representation: rank-k shapes are viewed as
    /// `shape[0] × product(shape[1..])`, 1-D as `1 × d`, scalars as `1 × 1`.
    pub tensor: Tensor2D,
}

/// An in-memory model checkpoint: named tensors plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, TensorEntry>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    /// Insert a 2-D tensor under its own shape.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor2D, dtype: Dtype) {
        let shape = vec![tensor.rows(), tensor.cols()];
        self.tensors.insert(
            name.into(),
            TensorEntry {
                shape,
                dtype,
                tensor,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// View an arbitrary-rank shape as matrix dimensions.
pub(crate) fn matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.is_empty() {
        return Ok((1, 1));
    }
    let rows = if shape.len() == 1 { 1 } else { shape[0] };
    let tail = if shape.len() == 1 {
        &shape[..]
    } else {
        &shape[1..]
    };
    let mut cols = 1usize;
    for &d in tail {
        cols = cols
            .checked_mul(d)
            .ok_or_else(|| Error::Validation("shape element count overflows".into()))?;
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Validation(format!(
            "zero-sized tensors are unsupported (shape {shape:?})"
        )));
    }
    Ok((rows, cols))
}

/// Write `bytes` to `path` through a temporary file and an atomic rename,
/// so readers never observe a partial file.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("invalid output path {}", path.display())))?;
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let tmp_name = format!(
        ".{}.tmp-{}-{}",
        file_name.to_string_lossy(),
        std::process::id(),
        nanos
    );
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => std::path::PathBuf::from(&tmp_name),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_dims_reshapes_by_rank() {
        assert_eq!(matrix_dims(&[]).unwrap(), (1, 1));
        assert_eq!(matrix_dims(&[5]).unwrap(), (1, 5));
        assert_eq!(matrix_dims(&[3, 4]).unwrap(), (3, 4));
        assert_eq!(matrix_dims(&[2, 3, 4]).unwrap(), (2, 12));
        assert!(matrix_dims(&[0, 4]).is_err());
    }
}
