#![no_std]

//! Logit-lens entropy profiling for decoder-only transformers.
//!
//! This crate is the allocation-only core: numerics kernels, a GPT-2
//! compatible byte-level BPE tokenizer, a tensor-archive parser, the GPT-2
//! forward pass with residual-stream taps, the logit lens, corpus selection
//! and the mergeable entropy aggregates. It does no file or thread IO; the
//! `lensprobe` crate wraps it with file formats, reports and a CLI.
//!
//! The pipeline for one sequence is
//!
//! ```text
//! tokens --forward_with_taps--> TapGrid --lens_sequence--> LensRecord[]
//!        --EntropyAggregate::accumulate--> ... --finalize--> EntropyMatrix
//! ```

extern crate alloc;

pub mod analysis;
pub mod archive;
pub mod checkpoint;
pub mod corpus;
pub mod lens;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod trend;

pub use analysis::{DistributionView, EntropyAggregate, EntropyMatrix, Series};
pub use archive::{Dtype, TensorArchive, TensorEntry};
pub use checkpoint::{BlockWeights, Checkpoint};
pub use lens::{LensMode, LensRecord};
pub use model::{ModelConfig, TapGrid};
pub use numerics::{LogitVector, Matrix, ProbVector};
pub use tokenizer::{TokenId, Vocab};

/// Layer-norm epsilon used throughout GPT-2.
pub const LAYER_NORM_EPS: f32 = 1e-5;
