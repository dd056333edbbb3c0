//! Container and adapter I/O: round trips, byte determinism, and parser
//! robustness under random mutation.

use std::collections::BTreeMap;

use from_merge::io::{
    encode_container, parse_container, read_container, read_lora, write_container, write_lora,
    Checkpoint, Dtype, LoraAdapter, LoraPair,
};
use from_merge::rng::{seeded_normal, stream_rng};
use from_merge::tensor::Tensor2D;
use proptest::prelude::*;
use rand::Rng;

fn fixture_checkpoint() -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    ckpt.insert("encoder.weight", seeded_normal(4, 6, 1.0, 1, b"f1"), Dtype::F64);
    ckpt.insert("decoder.weight", seeded_normal(3, 3, 1.0, 2, b"f2"), Dtype::F32);
    ckpt.insert("head.bias", seeded_normal(1, 5, 1.0, 3, b"f3"), Dtype::F64);
    ckpt.metadata.insert("name".into(), "fixture".into());
    ckpt.metadata.insert("format".into(), "test".into());
    ckpt
}

#[test]
fn file_round_trip_preserves_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    let ckpt = fixture_checkpoint();
    write_container(&ckpt, &path).unwrap();
    let back = read_container(&path).unwrap();
    // F32 values in the fixture came from f64 noise, so compare F64
    // tensors bit-exactly and F32 tensors after rounding.
    assert_eq!(back.metadata, ckpt.metadata);
    assert_eq!(back.len(), ckpt.len());
    for (name, entry) in &ckpt.tensors {
        let loaded = back.get(name).unwrap();
        assert_eq!(loaded.shape, entry.shape);
        assert_eq!(loaded.dtype, entry.dtype);
        match entry.dtype {
            Dtype::F64 => assert_eq!(loaded.tensor, entry.tensor),
            Dtype::F32 => {
                for (a, b) in loaded.tensor.data().iter().zip(entry.tensor.data()) {
                    assert_eq!(*a, *b as f32 as f64);
                }
            }
        }
    }
}

#[test]
fn writing_twice_produces_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fixture_checkpoint();
    let p1 = dir.path().join("a.safetensors");
    let p2 = dir.path().join("b.safetensors");
    write_container(&ckpt, &p1).unwrap();
    write_container(&ckpt, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn f32_round_trip_is_value_exact() {
    // Values chosen representable in f32.
    let mut ckpt = Checkpoint::new();
    let values = vec![0.5, -1.25, 3.0, 1e-20, 6.1035156e-5_f32 as f64, -0.0];
    ckpt.insert(
        "w",
        Tensor2D::from_vec(2, 3, values.iter().map(|v| *v as f32 as f64).collect()).unwrap(),
        Dtype::F32,
    );
    let back = parse_container(&encode_container(&ckpt).unwrap()).unwrap();
    assert_eq!(back.get("w").unwrap().tensor, ckpt.get("w").unwrap().tensor);
}

#[test]
fn mutation_fuzz_never_panics() {
    let ckpt = fixture_checkpoint();
    let valid = encode_container(&ckpt).unwrap();
    let mut rng = stream_rng(99, b"fuzz");
    let mut parsed_ok = 0usize;
    for _ in 0..2000 {
        let mut bytes = valid.clone();
        let flips = 1 + (rng.random::<u64>() % 4) as usize;
        for _ in 0..flips {
            let pos = (rng.random::<u64>() as usize) % bytes.len();
            bytes[pos] = rng.random::<u64>() as u8;
        }
        if rng.random::<f64>() < 0.25 {
            let cut = (rng.random::<u64>() as usize) % (bytes.len() + 1);
            bytes.truncate(cut);
        }
        if parse_container(&bytes).is_ok() {
            parsed_ok += 1;
        }
    }
    // Some mutations only touch payload bytes and still parse; the point
    // is that none of them crash or read out of bounds.
    assert!(parsed_ok < 2000);
}

#[test]
fn adapter_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut layers = BTreeMap::new();
    for (i, name) in ["q_proj", "k_proj"].iter().enumerate() {
        layers.insert(
            name.to_string(),
            LoraPair {
                b: seeded_normal(8, 4, 1.0, i as u64, b"rb"),
                a: seeded_normal(4, 6, 1.0, i as u64, b"ra"),
            },
        );
    }
    let adapter = LoraAdapter {
        layers,
        rank: 4,
        scaling_alpha: 0.7,
        dtype: Dtype::F64,
    };
    let w1 = dir.path().join("x.safetensors");
    let c1 = dir.path().join("x.json");
    let w2 = dir.path().join("y.safetensors");
    let c2 = dir.path().join("y.json");
    write_lora(&adapter, &w1, &c1).unwrap();
    write_lora(&adapter, &w2, &c2).unwrap();
    assert_eq!(std::fs::read(&w1).unwrap(), std::fs::read(&w2).unwrap());
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    assert_eq!(read_lora(&w1, &c1).unwrap(), adapter);
}

#[test]
fn missing_file_reports_io_error() {
    let err = read_container("/nonexistent/path/model.safetensors").unwrap_err();
    assert!(matches!(err, from_merge::Error::Io { .. }));
}

fn tensor_strategy(dtype: Dtype) -> impl Strategy<Value = Tensor2D> {
    (1usize..5, 1usize..5).prop_flat_map(move |(rows, cols)| {
        let value = match dtype {
            // F32 storage: draw representable values so the round trip is exact.
            Dtype::F32 => prop::num::f32::NORMAL.prop_map(|v| v as f64).boxed(),
            Dtype::F64 => prop::num::f64::NORMAL.boxed(),
        };
        prop::collection::vec(value, rows * cols)
            .prop_map(move |data| Tensor2D::from_vec(rows, cols, data).unwrap())
    })
}

fn checkpoint_strategy() -> impl Strategy<Value = Checkpoint> {
    let entry = prop_oneof![Just(Dtype::F32), Just(Dtype::F64)]
        .prop_flat_map(|dtype| tensor_strategy(dtype).prop_map(move |t| (dtype, t)));
    (
        prop::collection::btree_map("[a-z]{1,8}(\\.[a-z]{1,8})?", entry, 0..4),
        prop::collection::btree_map("[a-z]{1,6}", "[ -~]{0,12}", 0..3),
    )
        .prop_map(|(tensors, metadata)| {
            let mut ckpt = Checkpoint::new();
            for (name, (dtype, tensor)) in tensors {
                ckpt.insert(name, tensor, dtype);
            }
            ckpt.metadata = metadata;
            ckpt
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_round_trip(ckpt in checkpoint_strategy()) {
        let bytes = encode_container(&ckpt).unwrap();
        let back = parse_container(&bytes).unwrap();
        prop_assert_eq!(back, ckpt);
    }

    #[test]
    fn reencoding_is_stable(ckpt in checkpoint_strategy()) {
        let bytes = encode_container(&ckpt).unwrap();
        let again = encode_container(&parse_container(&bytes).unwrap()).unwrap();
        prop_assert_eq!(bytes, again);
    }
}
