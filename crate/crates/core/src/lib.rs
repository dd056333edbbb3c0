//! Checkpoint merging weighted by Frobenius norms.
//!
//! Task vectors (fine-tuned weights minus base weights) are merged with
//! per-layer weights `wᵢ = ‖θᵢ‖_F^k`: the closed-form weighted mean for
//! fully fine-tuned models, and alternating low-rank optimization with an
//! explicit output rank for LoRA adapters. Comparison baselines (simple
//! averaging, task arithmetic, DARE, RegMean from supplied Gram matrices,
//! largest-norm selection), bit-exact checkpoint I/O, and a synthetic
//! experiment harness round out the toolkit.

pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lora;
pub mod merge;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use io::{Checkpoint, Dtype, LoraAdapter};
pub use merge::{MergeConfig, MergeMethod, MergeReport, NormScope, TaskVector};
pub use tensor::Tensor2D;
