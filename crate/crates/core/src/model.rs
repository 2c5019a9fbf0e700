//! GPT-2 pre-norm decoder forward pass with residual-stream taps.
//!
//! Each block computes
//!
//! ```text
//! x <- x + Attn(LN1(x))
//! x <- x + MLP(LN2(x))
//! ```
//!
//! and the residual stream is recorded after the second addition. Layer 0
//! of the tap grid is the input embedding. The terminal layer norm is not
//! applied to any tap; see [`final_norm`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::{BlockWeights, Checkpoint};
use crate::numerics::{self, Matrix};
use crate::tokenizer::TokenId;
use crate::LAYER_NORM_EPS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid model config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds context length {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("empty token sequence")]
    Empty,
    #[error("token id {id} at position {position} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { position: usize, id: u32, vocab_size: usize },
    #[error("non-finite activation after layer {layer} at position {position}")]
    NumericFault { layer: usize, position: usize },
    #[error("non-finite input vector")]
    NonFiniteInput,
    #[error("input vector has length {actual}, expected {expected}")]
    Width { actual: usize, expected: usize },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Number of transformer blocks `L`.
    pub layers: usize,
    /// Residual width `D`.
    pub width: usize,
    /// Attention heads `H`.
    pub heads: usize,
    /// Vocabulary size `M`.
    pub vocab_size: usize,
    /// Maximum context length `C`.
    pub context_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.into()));
        if self.layers < 1 {
            return fail("at least one layer required");
        }
        if self.width < 1 || self.heads < 1 {
            return fail("width and head count must be positive");
        }
        if !self.width.is_multiple_of(self.heads) {
            return fail("width must be divisible by the head count");
        }
        if self.vocab_size < 2 {
            return fail("vocabulary needs at least two tokens");
        }
        if self.context_len < 1 {
            return fail("context length must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// Residual stream activations for one sequence, `(L+1) x N x D`.
///
/// Indices are 0-based: `tap(0, i)` is the embedding of token `i`,
/// `tap(j, i)` for `j >= 1` the stream after block `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TapGrid {
    layers: usize,
    positions: usize,
    width: usize,
    data: Vec<f32>,
}

impl TapGrid {
    /// Number of tapped layers, `L + 1`.
    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tap(&self, layer: usize, position: usize) -> &[f32] {
        let start = (layer * self.positions + position) * self.width;
        &self.data[start..start + self.width]
    }

    pub fn tap_mut(&mut self, layer: usize, position: usize) -> &mut [f32] {
        let start = (layer * self.positions + position) * self.width;
        &mut self.data[start..start + self.width]
    }

    /// All positions of one layer, row-major `N x D`.
    pub fn layer(&self, layer: usize) -> &[f32] {
        let size = self.positions * self.width;
        &self.data[layer * size..(layer + 1) * size]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Attention weights of one head in one layer, row-major `N x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPattern {
    pub layer: usize,
    pub head: usize,
    pub positions: usize,
    pub weights: Vec<f32>,
}

impl AttentionPattern {
    pub fn row(&self, query: usize) -> &[f32] {
        &self.weights[query * self.positions..(query + 1) * self.positions]
    }
}

fn check_tokens(ckpt: &Checkpoint, tokens: &[TokenId]) -> Result<(), ModelError> {
    let c = &ckpt.config;
    if tokens.len() > c.context_len {
        return Err(ModelError::ContextOverflow {
            len: tokens.len(),
            max: c.context_len,
        });
    }
    if let Some((position, id)) = tokens.iter().enumerate().find(|(_, t)| t.index() >= c.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            position,
            id: id.0,
            vocab_size: c.vocab_size,
        });
    }
    Ok(())
}

/// Token plus position embedding, `row i = W_E[t_i] + W_P[i]`.
pub fn embed(ckpt: &Checkpoint, tokens: &[TokenId]) -> Result<Matrix, ModelError> {
    check_tokens(ckpt, tokens)?;
    let d = ckpt.config.width;
    let mut out = Matrix::zeros(tokens.len(), d);
    for (i, t) in tokens.iter().enumerate() {
        let tok = ckpt.token_embedding.row(t.index());
        let pos = ckpt.position_embedding.row(i);
        for ((o, &a), &b) in out.row_mut(i).iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }
    Ok(out)
}

/// Runs the full sequence and records the residual stream at every layer.
pub fn forward_with_taps(ckpt: &Checkpoint, tokens: &[TokenId]) -> Result<TapGrid, ModelError> {
    run(ckpt, tokens, None)
}

/// [`forward_with_taps`] that also returns every head's attention weights,
/// ordered by layer then head.
pub fn forward_traced(ckpt: &Checkpoint, tokens: &[TokenId]) -> Result<(TapGrid, Vec<AttentionPattern>), ModelError> {
    let mut patterns = Vec::new();
    let grid = run(ckpt, tokens, Some(&mut patterns))?;
    Ok((grid, patterns))
}

/// The checkpoint's terminal layer norm.
pub fn final_norm(ckpt: &Checkpoint, x: &[f32]) -> Result<Vec<f32>, ModelError> {
    let expected = ckpt.config.width;
    if x.len() != expected {
        return Err(ModelError::Width {
            actual: x.len(),
            expected,
        });
    }
    let mut out = vec![0.0; expected];
    final_norm_into(ckpt, x, &mut out).map_err(|_| ModelError::NonFiniteInput)?;
    Ok(out)
}

pub(crate) fn final_norm_into(ckpt: &Checkpoint, x: &[f32], out: &mut [f32]) -> Result<(), numerics::NumericsError> {
    numerics::layer_norm_into(x, &ckpt.final_norm_gain, &ckpt.final_norm_shift, LAYER_NORM_EPS, out)
}

fn run(ckpt: &Checkpoint, tokens: &[TokenId], mut trace: Option<&mut Vec<AttentionPattern>>) -> Result<TapGrid, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::Empty);
    }
    let x0 = embed(ckpt, tokens)?;
    let c = &ckpt.config;
    let n = tokens.len();
    let d = c.width;
    let layer_size = n * d;
    let mut data = Vec::with_capacity((c.layers + 1) * layer_size);
    data.extend_from_slice(x0.as_slice());
    check_layer(&data, 0, d)?;

    let mut scratch = Scratch::new(n, d);
    let mut x = x0.into_vec();
    for (l, block) in ckpt.blocks.iter().enumerate() {
        apply_block(c, block, l, &mut x, n, &mut scratch, trace.as_deref_mut());
        check_layer(&x, l + 1, d)?;
        data.extend_from_slice(&x);
    }
    Ok(TapGrid {
        layers: c.layers + 1,
        positions: n,
        width: d,
        data,
    })
}

fn check_layer(x: &[f32], layer: usize, d: usize) -> Result<(), ModelError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(ModelError::NumericFault {
            layer,
            position: idx / d,
        }),
        None => Ok(()),
    }
}

struct Scratch {
    normed: Vec<f32>,
    qkv: Vec<f32>,
    heads_out: Vec<f32>,
    proj: Vec<f32>,
    hidden: Vec<f32>,
    scores: Vec<f32>,
}

impl Scratch {
    fn new(n: usize, d: usize) -> Self {
        Self {
            normed: vec![0.0; n * d],
            qkv: vec![0.0; n * 3 * d],
            heads_out: vec![0.0; n * d],
            proj: vec![0.0; n * d],
            hidden: vec![0.0; n * 4 * d],
            scores: vec![0.0; n],
        }
    }
}

fn add_bias(rows: &mut [f32], bias: &[f32]) {
    for row in rows.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn norm_rows(x: &[f32], gain: &[f32], shift: &[f32], out: &mut [f32]) {
    let d = gain.len();
    for (src, dst) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        // non-finite rows are caught by the per-layer check
        if numerics::layer_norm_into(src, gain, shift, LAYER_NORM_EPS, dst).is_err() {
            dst.fill(f32::NAN);
        }
    }
}

fn apply_block(
    c: &ModelConfig,
    w: &BlockWeights,
    layer: usize,
    x: &mut [f32],
    n: usize,
    s: &mut Scratch,
    mut trace: Option<&mut Vec<AttentionPattern>>,
) {
    let d = c.width;
    let hd = c.head_dim();
    let scale = 1.0 / libm::sqrtf(hd as f32);

    norm_rows(x, &w.ln1_gain, &w.ln1_shift, &mut s.normed);
    numerics::matmul_into(&s.normed, n, d, w.attn_qkv.as_slice(), 3 * d, &mut s.qkv);
    add_bias(&mut s.qkv, &w.attn_qkv_bias);

    for head in 0..c.heads {
        let q_off = head * hd;
        let k_off = d + head * hd;
        let v_off = 2 * d + head * hd;
        let mut pattern = trace.as_ref().map(|_| vec![0.0f32; n * n]);
        for i in 0..n {
            let q = &s.qkv[i * 3 * d + q_off..i * 3 * d + q_off + hd];
            let scores = &mut s.scores[..=i];
            for (t, score) in scores.iter_mut().enumerate() {
                let k = &s.qkv[t * 3 * d + k_off..t * 3 * d + k_off + hd];
                *score = numerics::dot(q, k) * scale;
            }
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0.0f32;
            for score in scores.iter_mut() {
                *score = libm::expf(*score - max);
                total += *score;
            }
            for score in scores.iter_mut() {
                *score /= total;
            }
            let out = &mut s.heads_out[i * d + head * hd..i * d + head * hd + hd];
            out.fill(0.0);
            for (t, &p) in scores.iter().enumerate() {
                let v = &s.qkv[t * 3 * d + v_off..t * 3 * d + v_off + hd];
                for (o, &vv) in out.iter_mut().zip(v) {
                    *o += p * vv;
                }
            }
            if let Some(p) = pattern.as_mut() {
                p[i * n..i * n + i + 1].copy_from_slice(scores);
            }
        }
        if let (Some(t), Some(weights)) = (trace.as_deref_mut(), pattern) {
            t.push(AttentionPattern {
                layer,
                head,
                positions: n,
                weights,
            });
        }
    }
    numerics::matmul_into(&s.heads_out, n, d, w.attn_out.as_slice(), d, &mut s.proj);
    add_bias(&mut s.proj, &w.attn_out_bias);
    for (xv, &p) in x.iter_mut().zip(&s.proj) {
        *xv += p;
    }

    norm_rows(x, &w.ln2_gain, &w.ln2_shift, &mut s.normed);
    numerics::matmul_into(&s.normed, n, d, w.mlp_in.as_slice(), 4 * d, &mut s.hidden);
    add_bias(&mut s.hidden, &w.mlp_in_bias);
    for h in &mut s.hidden {
        *h = numerics::gelu(*h);
    }
    numerics::matmul_into(&s.hidden, n, 4 * d, w.mlp_out.as_slice(), d, &mut s.proj);
    add_bias(&mut s.proj, &w.mlp_out_bias);
    for (xv, &p) in x.iter_mut().zip(&s.proj) {
        *xv += p;
    }
}
