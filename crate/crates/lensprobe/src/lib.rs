//! File formats, parallel runner, reports and command line for
//! `lensprobe-core`.

pub mod analyze;
pub mod error;
pub mod io;
pub mod report;
pub mod runner;
pub mod selftest;
pub mod svg;

pub use error::{Error, Result};
pub use lensprobe_core as core;

use lensprobe_core::ModelConfig;

/// Seed of the built-in toy checkpoint.
pub const TOY_SEED: u64 = 7;

/// The toy architecture: 2 blocks, width 16, 2 heads, 32 tokens.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        width: 16,
        heads: 2,
        vocab_size: 32,
        context_len: 64,
    }
}
