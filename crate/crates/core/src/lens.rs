//! Logit lens: read any residual-stream vector as a vocabulary
//! distribution through the tied unembedding, `softmax(W_E y)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::model::{final_norm_into, TapGrid};
use crate::numerics::{self, NumericsError, ProbVector};
use crate::tokenizer::TokenId;

/// Rows unembedded per batch; bounds the logits buffer to
/// `LOGIT_BATCH x M` floats.
const LOGIT_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LensError {
    #[error("non-finite lens input at layer {layer}, position {position}")]
    NumericFault { layer: usize, position: usize },
    #[error("tap grid has {grid} positions but {tokens} tokens were given")]
    Shape { grid: usize, tokens: usize },
    #[error("vector has length {actual}, expected {expected}")]
    Width { actual: usize, expected: usize },
    #[error("k = {k} outside 1..={size}")]
    TopK { k: usize, size: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Whether taps pass through the terminal layer norm before unembedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LensMode {
    /// Unembed the residual stream as is.
    Raw,
    /// Apply the checkpoint's final layer norm first.
    #[default]
    FinalNorm,
}

impl LensMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LensMode::Raw => "raw",
            LensMode::FinalNorm => "final_norm",
        }
    }
}

impl fmt::Display for LensMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown lens mode {0:?} (expected raw or final_norm)")]
pub struct ParseLensModeError(pub alloc::string::String);

impl FromStr for LensMode {
    type Err = ParseLensModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(LensMode::Raw),
            "final_norm" => Ok(LensMode::FinalNorm),
            other => Err(ParseLensModeError(other.into())),
        }
    }
}

/// Lens output at one `(layer, position)` of one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensRecord {
    /// `0..=L`, 0 being the input embedding.
    pub layer: usize,
    /// 1-based token position `i`; the distribution predicts token `i + 1`.
    pub position: usize,
    pub entropy_bits: f64,
    pub top1: TokenId,
    /// Whether `top1` is the actual next token. `None` at the last position
    /// when no continuation is known.
    pub correct: Option<bool>,
}

fn prepare(ckpt: &Checkpoint, y: &[f32], mode: LensMode, out: &mut [f32]) -> Result<(), NumericsError> {
    match mode {
        LensMode::Raw => {
            if let Some(index) = y.iter().position(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { index });
            }
            out.copy_from_slice(y);
            Ok(())
        }
        LensMode::FinalNorm => final_norm_into(ckpt, y, out),
    }
}

/// Unembedding logits `W_E y'` where `y'` is `y` or its final-normed form.
pub fn logits(ckpt: &Checkpoint, y: &[f32], mode: LensMode) -> Result<Vec<f32>, LensError> {
    let d = ckpt.config.width;
    if y.len() != d {
        return Err(LensError::Width {
            actual: y.len(),
            expected: d,
        });
    }
    let mut prepared = vec![0.0; d];
    prepare(ckpt, y, mode, &mut prepared).map_err(|_| LensError::NumericFault { layer: 0, position: 0 })?;
    let mut out = vec![0.0; ckpt.config.vocab_size];
    unembed_rows(ckpt, &prepared, 1, &mut out);
    Ok(out)
}

/// The lens distribution `softmax(W_E y')`.
pub fn unembed(ckpt: &Checkpoint, y: &[f32], mode: LensMode) -> Result<ProbVector, LensError> {
    Ok(numerics::softmax(&logits(ckpt, y, mode)?)?)
}

/// `out[r * M + m] = dot(W_E[m], rows[r])`.
fn unembed_rows(ckpt: &Checkpoint, rows: &[f32], count: usize, out: &mut [f32]) {
    let d = ckpt.config.width;
    let m_total = ckpt.config.vocab_size;
    for m in 0..m_total {
        let w = ckpt.token_embedding.row(m);
        for r in 0..count {
            out[r * m_total + m] = numerics::dot(w, &rows[r * d..(r + 1) * d]);
        }
    }
}

/// Lenses every tap of a sequence. Records are ordered by layer, then
/// position.
pub fn lens_sequence(
    ckpt: &Checkpoint,
    grid: &TapGrid,
    tokens: &[TokenId],
    continuation: Option<TokenId>,
    mode: LensMode,
) -> Result<Vec<LensRecord>, LensError> {
    let n = grid.positions();
    if tokens.len() != n {
        return Err(LensError::Shape {
            grid: n,
            tokens: tokens.len(),
        });
    }
    let d = ckpt.config.width;
    if grid.width() != d {
        return Err(LensError::Width {
            actual: grid.width(),
            expected: d,
        });
    }
    let m = ckpt.config.vocab_size;
    let cells: Vec<(usize, usize)> = (0..grid.layers()).flat_map(|j| (0..n).map(move |i| (j, i))).collect();
    let mut prepared = vec![0.0f32; LOGIT_BATCH * d];
    let mut logit_buf = vec![0.0f32; LOGIT_BATCH * m];
    let mut records = Vec::with_capacity(cells.len());

    for batch in cells.chunks(LOGIT_BATCH) {
        for (r, &(j, i)) in batch.iter().enumerate() {
            prepare(ckpt, grid.tap(j, i), mode, &mut prepared[r * d..(r + 1) * d])
                .map_err(|_| LensError::NumericFault { layer: j, position: i + 1 })?;
        }
        unembed_rows(ckpt, &prepared[..batch.len() * d], batch.len(), &mut logit_buf);
        for (r, &(j, i)) in batch.iter().enumerate() {
            let row = &logit_buf[r * m..(r + 1) * m];
            let entropy_bits = numerics::entropy_bits_from_logits(row)
                .map_err(|_| LensError::NumericFault { layer: j, position: i + 1 })?;
            let top1 = TokenId(numerics::argmax(row).unwrap_or(0) as u32);
            let next = if i + 1 < n { Some(tokens[i + 1]) } else { continuation };
            records.push(LensRecord {
                layer: j,
                position: i + 1,
                entropy_bits,
                top1,
                correct: next.map(|t| t == top1),
            });
        }
    }
    Ok(records)
}

/// The `k` most probable tokens, descending, ties to the lower id.
pub fn topk(p: &ProbVector, k: usize) -> Result<Vec<(TokenId, f64)>, LensError> {
    let size = p.len();
    if k == 0 || k > size {
        return Err(LensError::TopK { k, size });
    }
    let mut order: Vec<usize> = (0..size).collect();
    let values = p.as_slice();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(order[..k].iter().map(|&i| (TokenId(i as u32), values[i])).collect())
}
