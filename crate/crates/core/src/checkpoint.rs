//! GPT-2 weights: mapping archive tensor names onto model slots, and the
//! seeded toy checkpoint used by tests and the self-test.
//!
//! Tensor names follow the published GPT-2 checkpoints, optionally under a
//! `transformer.` prefix:
//!
//! | name                     | shape      |
//! |--------------------------|------------|
//! | `wte.weight`             | `[M, D]`   |
//! | `wpe.weight`             | `[C, D]`   |
//! | `h.{l}.ln_1.{weight,bias}` | `[D]`    |
//! | `h.{l}.attn.c_attn.weight` | `[D, 3D]` |
//! | `h.{l}.attn.c_attn.bias`   | `[3D]`   |
//! | `h.{l}.attn.c_proj.weight` | `[D, D]` |
//! | `h.{l}.attn.c_proj.bias`   | `[D]`    |
//! | `h.{l}.ln_2.{weight,bias}` | `[D]`    |
//! | `h.{l}.mlp.c_fc.weight`    | `[D, 4D]` |
//! | `h.{l}.mlp.c_fc.bias`      | `[4D]`   |
//! | `h.{l}.mlp.c_proj.weight`  | `[4D, D]` |
//! | `h.{l}.mlp.c_proj.bias`    | `[D]`    |
//! | `ln_f.{weight,bias}`     | `[D]`      |
//!
//! The projection weights are stored `[in, out]` (GPT-2's Conv1D layout),
//! which is already the right-hand operand of `x * W` for row vectors, so
//! they are kept as stored. The head count is not recoverable from shapes;
//! it is read from the `n_head` metadata entry, or taken as `D / 64` (true
//! for every published GPT-2 size) when that entry is absent.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::archive::{ArchiveError, ArchiveWriter, TensorArchive};
use crate::model::{ConfigError, ModelConfig};
use crate::numerics::Matrix;

/// Standard deviation of the toy checkpoint's random weights.
pub const TOY_WEIGHT_STDEV: f32 = 0.02;
const HEAD_DIM_FALLBACK: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        actual: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("untied unembedding: {0:?} differs from the token embedding")]
    Untied(String),
    #[error("cannot determine head count: {0}")]
    HeadCount(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gain: Vec<f32>,
    pub ln1_shift: Vec<f32>,
    /// `[D, 3D]`, columns ordered query, key, value.
    pub attn_qkv: Matrix,
    pub attn_qkv_bias: Vec<f32>,
    /// `[D, D]`
    pub attn_out: Matrix,
    pub attn_out_bias: Vec<f32>,
    pub ln2_gain: Vec<f32>,
    pub ln2_shift: Vec<f32>,
    /// `[D, 4D]`
    pub mlp_in: Matrix,
    pub mlp_in_bias: Vec<f32>,
    /// `[4D, D]`
    pub mlp_out: Matrix,
    pub mlp_out_bias: Vec<f32>,
}

/// Pretrained weights with a tied unembedding (`W_D = W_E^T`, no bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// `[M, D]`; row `t` embeds token `t` and doubles as unembedding row `t`.
    pub token_embedding: Matrix,
    /// `[C, D]`
    pub position_embedding: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub final_norm_gain: Vec<f32>,
    pub final_norm_shift: Vec<f32>,
}

fn block_name(prefix: &str, layer: usize, rest: &str) -> String {
    format!("{prefix}h.{layer}.{rest}")
}

struct Loader<'a> {
    archive: &'a TensorArchive,
    prefix: &'a str,
}

impl Loader<'_> {
    fn tensor(&self, name: &str, expected: &[usize]) -> Result<Vec<f32>, CheckpointError> {
        let full = format!("{}{name}", self.prefix);
        let entry = self
            .archive
            .entries()
            .get(&full)
            .ok_or_else(|| CheckpointError::MissingTensor(full.clone()))?;
        if entry.shape != expected {
            return Err(CheckpointError::Shape {
                name: full,
                actual: entry.shape.clone(),
                expected: expected.to_vec(),
            });
        }
        Ok(self.archive.to_f32(&full)?)
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix, CheckpointError> {
        let data = self.tensor(name, &[rows, cols])?;
        Ok(Matrix::from_vec(rows, cols, data).expect("length checked against shape"))
    }

    fn shape(&self, name: &str) -> Result<Vec<usize>, CheckpointError> {
        let full = format!("{}{name}", self.prefix);
        self.archive
            .entries()
            .get(&full)
            .map(|e| e.shape.clone())
            .ok_or(CheckpointError::MissingTensor(full))
    }
}

impl Checkpoint {
    /// Maps a GPT-2 archive onto model weights, inferring the configuration
    /// from tensor shapes.
    pub fn from_archive(archive: &TensorArchive) -> Result<Self, CheckpointError> {
        let prefix = if archive.contains("wte.weight") {
            ""
        } else if archive.contains("transformer.wte.weight") {
            "transformer."
        } else {
            return Err(CheckpointError::MissingTensor("wte.weight".into()));
        };
        let ld = Loader { archive, prefix };

        let wte = ld.shape("wte.weight")?;
        let [vocab_size, width] = wte[..] else {
            return Err(CheckpointError::Shape {
                name: format!("{prefix}wte.weight"),
                actual: wte,
                expected: vec![0, 0],
            });
        };
        let wpe = ld.shape("wpe.weight")?;
        let context_len = match wpe[..] {
            [c, d] if d == width => c,
            _ => {
                return Err(CheckpointError::Shape {
                    name: format!("{prefix}wpe.weight"),
                    actual: wpe,
                    expected: vec![0, width],
                })
            }
        };
        let mut layers = 0;
        while archive.contains(&block_name(prefix, layers, "ln_1.weight")) {
            layers += 1;
        }
        let heads = match archive.metadata().get("n_head") {
            Some(s) => s
                .parse::<usize>()
                .map_err(|_| CheckpointError::HeadCount(format!("metadata n_head = {s:?}")))?,
            None if width % HEAD_DIM_FALLBACK == 0 => width / HEAD_DIM_FALLBACK,
            None => {
                return Err(CheckpointError::HeadCount(format!(
                    "no n_head metadata and width {width} is not a multiple of {HEAD_DIM_FALLBACK}"
                )))
            }
        };
        let config = ModelConfig {
            layers,
            width,
            heads,
            vocab_size,
            context_len,
        };
        config.validate()?;

        let d = width;
        let token_embedding = ld.matrix("wte.weight", vocab_size, d)?;
        let position_embedding = ld.matrix("wpe.weight", context_len, d)?;
        let mut blocks = Vec::with_capacity(layers);
        for l in 0..layers {
            let n = |rest: &str| format!("h.{l}.{rest}");
            blocks.push(BlockWeights {
                ln1_gain: ld.tensor(&n("ln_1.weight"), &[d])?,
                ln1_shift: ld.tensor(&n("ln_1.bias"), &[d])?,
                attn_qkv: ld.matrix(&n("attn.c_attn.weight"), d, 3 * d)?,
                attn_qkv_bias: ld.tensor(&n("attn.c_attn.bias"), &[3 * d])?,
                attn_out: ld.matrix(&n("attn.c_proj.weight"), d, d)?,
                attn_out_bias: ld.tensor(&n("attn.c_proj.bias"), &[d])?,
                ln2_gain: ld.tensor(&n("ln_2.weight"), &[d])?,
                ln2_shift: ld.tensor(&n("ln_2.bias"), &[d])?,
                mlp_in: ld.matrix(&n("mlp.c_fc.weight"), d, 4 * d)?,
                mlp_in_bias: ld.tensor(&n("mlp.c_fc.bias"), &[4 * d])?,
                mlp_out: ld.matrix(&n("mlp.c_proj.weight"), 4 * d, d)?,
                mlp_out_bias: ld.tensor(&n("mlp.c_proj.bias"), &[d])?,
            });
        }
        let final_norm_gain = ld.tensor("ln_f.weight", &[d])?;
        let final_norm_shift = ld.tensor("ln_f.bias", &[d])?;

        for head in ["lm_head.weight", "transformer.lm_head.weight"] {
            if archive.contains(head) {
                let tied = archive.entry(head)?.shape == [vocab_size, d]
                    && archive.to_f32(head)?.iter().map(|v| v.to_bits()).eq(token_embedding.as_slice().iter().map(|v| v.to_bits()));
                if !tied {
                    return Err(CheckpointError::Untied(head.to_owned()));
                }
            }
        }
        for bias in ["lm_head.bias", "transformer.lm_head.bias"] {
            if archive.contains(bias) {
                return Err(CheckpointError::Untied(bias.to_owned()));
            }
        }

        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            blocks,
            final_norm_gain,
            final_norm_shift,
        })
    }

    /// Seeded random checkpoint: every matrix and bias drawn from
    /// `N(0, 0.02^2)` in a fixed order, layer norms at gain 1 and shift 0.
    pub fn toy(config: ModelConfig, seed: u64) -> Result<Self, CheckpointError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, TOY_WEIGHT_STDEV).expect("positive finite stdev");
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let mat = |rows: usize, cols: usize, data: Vec<f32>| {
            Matrix::from_vec(rows, cols, data).expect("drawn length matches shape")
        };
        let d = config.width;
        let token_embedding = mat(config.vocab_size, d, draw(config.vocab_size * d));
        let position_embedding = mat(config.context_len, d, draw(config.context_len * d));
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let attn_qkv = mat(d, 3 * d, draw(3 * d * d));
            let attn_qkv_bias = draw(3 * d);
            let attn_out = mat(d, d, draw(d * d));
            let attn_out_bias = draw(d);
            let mlp_in = mat(d, 4 * d, draw(4 * d * d));
            let mlp_in_bias = draw(4 * d);
            let mlp_out = mat(4 * d, d, draw(4 * d * d));
            let mlp_out_bias = draw(d);
            blocks.push(BlockWeights {
                ln1_gain: vec![1.0; d],
                ln1_shift: vec![0.0; d],
                attn_qkv,
                attn_qkv_bias,
                attn_out,
                attn_out_bias,
                ln2_gain: vec![1.0; d],
                ln2_shift: vec![0.0; d],
                mlp_in,
                mlp_in_bias,
                mlp_out,
                mlp_out_bias,
            });
        }
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            blocks,
            final_norm_gain: vec![1.0; d],
            final_norm_shift: vec![0.0; d],
        })
    }

    /// Serializes in the GPT-2 naming scheme, with `n_head` metadata.
    pub fn to_archive(&self) -> Result<ArchiveWriter, CheckpointError> {
        let c = &self.config;
        let d = c.width;
        let mut w = ArchiveWriter::new();
        w.metadata("n_head", &c.heads.to_string());
        w.add_f32("wte.weight", &[c.vocab_size, d], self.token_embedding.as_slice())?;
        w.add_f32("wpe.weight", &[c.context_len, d], self.position_embedding.as_slice())?;
        for (l, b) in self.blocks.iter().enumerate() {
            let n = |rest: &str| block_name("", l, rest);
            w.add_f32(&n("ln_1.weight"), &[d], &b.ln1_gain)?;
            w.add_f32(&n("ln_1.bias"), &[d], &b.ln1_shift)?;
            w.add_f32(&n("attn.c_attn.weight"), &[d, 3 * d], b.attn_qkv.as_slice())?;
            w.add_f32(&n("attn.c_attn.bias"), &[3 * d], &b.attn_qkv_bias)?;
            w.add_f32(&n("attn.c_proj.weight"), &[d, d], b.attn_out.as_slice())?;
            w.add_f32(&n("attn.c_proj.bias"), &[d], &b.attn_out_bias)?;
            w.add_f32(&n("ln_2.weight"), &[d], &b.ln2_gain)?;
            w.add_f32(&n("ln_2.bias"), &[d], &b.ln2_shift)?;
            w.add_f32(&n("mlp.c_fc.weight"), &[d, 4 * d], b.mlp_in.as_slice())?;
            w.add_f32(&n("mlp.c_fc.bias"), &[4 * d], &b.mlp_in_bias)?;
            w.add_f32(&n("mlp.c_proj.weight"), &[4 * d, d], b.mlp_out.as_slice())?;
            w.add_f32(&n("mlp.c_proj.bias"), &[d], &b.mlp_out_bias)?;
        }
        w.add_f32("ln_f.weight", &[d], &self.final_norm_gain)?;
        w.add_f32("ln_f.bias", &[d], &self.final_norm_shift)?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            width: 16,
            heads: 2,
            vocab_size: 32,
            context_len: 64,
        }
    }

    fn roundtrip_archive(ckpt: &Checkpoint) -> TensorArchive {
        TensorArchive::from_bytes(ckpt.to_archive().unwrap().to_bytes()).unwrap()
    }

    #[test]
    fn toy_roundtrips_exactly() {
        let ckpt = Checkpoint::toy(toy_config(), 7).unwrap();
        let loaded = Checkpoint::from_archive(&roundtrip_archive(&ckpt)).unwrap();
        assert_eq!(loaded.config, toy_config());
        let bits = |c: &Checkpoint| -> Vec<u32> {
            let mut v: Vec<u32> = c.token_embedding.as_slice().iter().map(|x| x.to_bits()).collect();
            for b in &c.blocks {
                v.extend(b.mlp_out.as_slice().iter().map(|x| x.to_bits()));
                v.extend(b.attn_qkv_bias.iter().map(|x| x.to_bits()));
            }
            v
        };
        assert_eq!(bits(&loaded), bits(&ckpt));
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn toy_is_seed_deterministic() {
        let a = Checkpoint::toy(toy_config(), 7).unwrap().to_archive().unwrap().to_bytes();
        let b = Checkpoint::toy(toy_config(), 7).unwrap().to_archive().unwrap().to_bytes();
        let c = Checkpoint::toy(toy_config(), 8).unwrap().to_archive().unwrap().to_bytes();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn toy_weights_have_expected_spread() {
        let ckpt = Checkpoint::toy(toy_config(), 7).unwrap();
        let w = ckpt.blocks[0].mlp_in.as_slice();
        let mean = w.iter().map(|&v| f64::from(v)).sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.003, "{mean}");
        assert!((libm::sqrt(var) - 0.02).abs() < 0.002, "{var}");
        assert!(ckpt.blocks.iter().all(|b| b.ln1_gain.iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn missing_final_norm_gain() {
        let ckpt = Checkpoint::toy(toy_config(), 7).unwrap();
        let full = roundtrip_archive(&ckpt);
        let mut w = ArchiveWriter::new();
        w.metadata("n_head", "2");
        for (name, entry) in full.entries() {
            if name != "ln_f.weight" {
                w.add_raw(name, entry.dtype, &entry.shape, full.data(name).unwrap().to_vec()).unwrap();
            }
        }
        let archive = TensorArchive::from_bytes(w.to_bytes()).unwrap();
        assert_eq!(
            Checkpoint::from_archive(&archive).unwrap_err(),
            CheckpointError::MissingTensor("ln_f.weight".into())
        );
    }

    #[test]
    fn inconsistent_block_shape() {
        let mut ckpt = Checkpoint::toy(toy_config(), 7).unwrap();
        let mut w = ckpt.to_archive().unwrap();
        w.add_f32("h.1.mlp.c_fc.bias", &[3], &[0.0; 3]).unwrap();
        let err = Checkpoint::from_archive(&TensorArchive::from_bytes(w.to_bytes()).unwrap()).unwrap_err();
        assert!(matches!(err, CheckpointError::Shape { ref name, .. } if name == "h.1.mlp.c_fc.bias"));

        // an untied head is rejected, a bit-identical one accepted
        ckpt.token_embedding.as_mut_slice()[0] = 0.5;
        let mut w = ckpt.to_archive().unwrap();
        w.add_f32("lm_head.weight", &[32, 16], ckpt.token_embedding.as_slice()).unwrap();
        assert!(Checkpoint::from_archive(&TensorArchive::from_bytes(w.to_bytes()).unwrap()).is_ok());
        let mut other = ckpt.token_embedding.as_slice().to_vec();
        other[3] += 1.0;
        w.add_f32("lm_head.weight", &[32, 16], &other).unwrap();
        assert!(matches!(
            Checkpoint::from_archive(&TensorArchive::from_bytes(w.to_bytes()).unwrap()),
            Err(CheckpointError::Untied(_))
        ));
    }

    #[test]
    fn head_count_fallback_and_prefix() {
        let config = ModelConfig {
            layers: 1,
            width: 128,
            heads: 2,
            vocab_size: 4,
            context_len: 3,
        };
        let ckpt = Checkpoint::toy(config, 1).unwrap();
        let full = roundtrip_archive(&ckpt);
        let mut w = ArchiveWriter::new();
        for (name, entry) in full.entries() {
            let renamed = format!("transformer.{name}");
            w.add_raw(&renamed, entry.dtype, &entry.shape, full.data(name).unwrap().to_vec()).unwrap();
        }
        let loaded = Checkpoint::from_archive(&TensorArchive::from_bytes(w.to_bytes()).unwrap()).unwrap();
        assert_eq!(loaded.config.heads, 2);
        assert_eq!(loaded.config.layers, 1);
    }

    #[test]
    fn loading_twice_is_identical() {
        let bytes = Checkpoint::toy(toy_config(), 3).unwrap().to_archive().unwrap().to_bytes();
        let a = Checkpoint::from_archive(&TensorArchive::from_bytes(bytes.clone()).unwrap()).unwrap();
        let b = Checkpoint::from_archive(&TensorArchive::from_bytes(bytes).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
