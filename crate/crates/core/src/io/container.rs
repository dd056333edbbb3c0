//! Reading and writing the checkpoint container format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{matrix_dims, write_bytes_atomic, Checkpoint, Dtype, TensorEntry};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

const HEADER_LEN_BYTES: u64 = 8;

#[derive(Serialize, Deserialize)]
struct RawTensorInfo {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

fn parse_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

/// Read a container file from disk.
pub fn read_container(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_container(&bytes)
}

/// Parse container bytes. Never reads outside declared extents; any
/// malformed input yields an error rather than a panic.
pub fn parse_container(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN_BYTES as usize {
        return Err(parse_err(0, "file too short for 8-byte header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let rest = (bytes.len() as u64) - HEADER_LEN_BYTES;
    if header_len > rest {
        return Err(parse_err(
            0,
            format!("header length {header_len} exceeds remaining file size {rest}"),
        ));
    }
    let header_end = (HEADER_LEN_BYTES + header_len) as usize;
    let header_bytes = &bytes[HEADER_LEN_BYTES as usize..header_end];
    let payload = &bytes[header_end..];

    let raw: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(header_bytes)
        .map_err(|e| parse_err(HEADER_LEN_BYTES, format!("invalid JSON header: {e}")))?;

    let mut metadata = BTreeMap::new();
    let mut infos: Vec<(String, RawTensorInfo)> = Vec::new();
    for (name, value) in raw {
        if name == "__metadata__" {
            let map: BTreeMap<String, String> = serde_json::from_value(value).map_err(|e| {
                parse_err(HEADER_LEN_BYTES, format!("invalid __metadata__ map: {e}"))
            })?;
            metadata = map;
            continue;
        }
        let info: RawTensorInfo = serde_json::from_value(value).map_err(|e| {
            parse_err(
                HEADER_LEN_BYTES,
                format!("invalid header entry for tensor \"{name}\": {e}"),
            )
        })?;
        infos.push((name, info));
    }

    // Validate extents before touching any payload bytes.
    let payload_len = payload.len() as u64;
    let mut extents: Vec<(u64, u64, usize)> = Vec::with_capacity(infos.len());
    for (idx, (name, info)) in infos.iter().enumerate() {
        let [begin, end] = info.data_offsets;
        let abs = header_end as u64 + begin;
        if begin > end || end > payload_len {
            return Err(parse_err(
                abs,
                format!(
                    "tensor \"{name}\" extent [{begin}, {end}) is out of bounds \
                     (payload is {payload_len} bytes)"
                ),
            ));
        }
        let dtype = parse_dtype(&info.dtype, abs)?;
        let mut count: u64 = 1;
        for &d in &info.shape {
            count = count.checked_mul(d).ok_or_else(|| {
                parse_err(abs, format!("tensor \"{name}\" shape element count overflows"))
            })?;
        }
        let expected = count
            .checked_mul(dtype.byte_size() as u64)
            .ok_or_else(|| parse_err(abs, format!("tensor \"{name}\" byte size overflows")))?;
        if end - begin != expected {
            return Err(parse_err(
                abs,
                format!(
                    "tensor \"{name}\" extent holds {} bytes but shape {:?} as {} needs {expected}",
                    end - begin,
                    info.shape,
                    dtype
                ),
            ));
        }
        extents.push((begin, end, idx));
    }
    extents.sort_unstable();
    for pair in extents.windows(2) {
        let (_, prev_end, prev_idx) = pair[0];
        let (next_begin, _, next_idx) = pair[1];
        if next_begin < prev_end {
            return Err(parse_err(
                header_end as u64 + next_begin,
                format!(
                    "tensors \"{}\" and \"{}\" have overlapping extents",
                    infos[prev_idx].0, infos[next_idx].0
                ),
            ));
        }
    }

    let mut ckpt = Checkpoint {
        tensors: BTreeMap::new(),
        metadata,
    };
    for (name, info) in infos {
        let [begin, end] = info.data_offsets;
        let abs = header_end as u64 + begin;
        let dtype = parse_dtype(&info.dtype, abs)?;
        let raw = &payload[begin as usize..end as usize];
        let data: Vec<f64> = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        let shape: Vec<usize> = info
            .shape
            .iter()
            .map(|&d| {
                usize::try_from(d)
                    .map_err(|_| parse_err(abs, format!("tensor \"{name}\" dimension {d} too large")))
            })
            .collect::<Result<_>>()?;
        let (rows, cols) = matrix_dims(&shape).map_err(|e| parse_err(abs, e.to_string()))?;
        let tensor = Tensor2D::from_vec(rows, cols, data)
            .map_err(|e| parse_err(abs, e.to_string()))?;
        if ckpt
            .tensors
            .insert(
                name.clone(),
                TensorEntry {
                    shape,
                    dtype,
                    tensor,
                },
            )
            .is_some()
        {
            return Err(parse_err(
                HEADER_LEN_BYTES,
                format!("duplicate tensor name \"{name}\""),
            ));
        }
    }
    Ok(ckpt)
}

fn parse_dtype(s: &str, offset: u64) -> Result<Dtype> {
    match s {
        "F32" => Ok(Dtype::F32),
        "F64" => Ok(Dtype::F64),
        other => Err(parse_err(offset, format!("unsupported dtype \"{other}\""))),
    }
}

/// Write a checkpoint to disk atomically. Tensors are serialized in
/// name-sorted order; identical checkpoints produce byte-identical files.
pub fn write_container(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_container(ckpt)?;
    write_bytes_atomic(path.as_ref(), &bytes)
}

/// Serialize a checkpoint to container bytes.
pub fn encode_container(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    // serde_json maps are BTreeMap-backed, so header keys come out sorted
    // and the byte stream is deterministic.
    let mut header = serde_json::Map::new();
    if !ckpt.metadata.is_empty() {
        header.insert(
            "__metadata__".to_string(),
            serde_json::to_value(&ckpt.metadata).expect("string map serializes"),
        );
    }
    let mut payload: Vec<u8> = Vec::new();
    for (name, entry) in &ckpt.tensors {
        let (rows, cols) = matrix_dims(&entry.shape)?;
        if (rows, cols) != entry.tensor.shape() {
            return Err(Error::Validation(format!(
                "tensor \"{name}\" recorded shape {:?} does not match data {}x{}",
                entry.shape,
                entry.tensor.rows(),
                entry.tensor.cols()
            )));
        }
        let begin = payload.len() as u64;
        match entry.dtype {
            Dtype::F32 => {
                for &v in entry.tensor.data() {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for &v in entry.tensor.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let end = payload.len() as u64;
        let info = RawTensorInfo {
            dtype: entry.dtype.as_str().to_string(),
            shape: entry.shape.iter().map(|&d| d as u64).collect(),
            data_offsets: [begin, end],
        };
        header.insert(
            name.clone(),
            serde_json::to_value(info).expect("tensor info serializes"),
        );
    }
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    Ok(out)
}
