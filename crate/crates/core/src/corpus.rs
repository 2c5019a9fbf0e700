//! Sentence sampling, length filtering and truncation.
//!
//! From the input sentences a seeded uniform sample is drawn; each sampled
//! sentence is tokenized, dropped when shorter than `seq_len` tokens, and
//! truncated to exactly `seq_len` tokens. When the sentence was longer, the
//! token right after the cut is kept as the ground-truth continuation.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tokenizer::{TokenId, Vocab};

/// Default fixed sequence length.
pub const DEFAULT_SEQ_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("sample size must be at least 1")]
    SampleSize,
    #[error("sequence length must be at least 2, got {0}")]
    SeqLen(usize),
    #[error("no sentence reached {seq_len} tokens ({sampled} sampled of {read} read)")]
    Empty { read: usize, sampled: usize, seq_len: usize },
}

/// One fixed-length token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    /// Index of the sentence in the input.
    pub source_index: usize,
    /// Exactly `seq_len` tokens.
    pub tokens: Vec<TokenId>,
    /// Token `seq_len + 1` of the source, when it had one.
    pub continuation: Option<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionParams {
    pub sample_size: usize,
    pub seed: u64,
    pub seq_len: usize,
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.sample_size < 1 {
            return Err(CorpusError::SampleSize);
        }
        if self.seq_len < 2 {
            return Err(CorpusError::SeqLen(self.seq_len));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct CorpusCounts {
    pub read: usize,
    pub sampled: usize,
    pub kept: usize,
}

/// Seeded uniform sample of `min(sample_size, total)` indices out of
/// `0..total`, returned in ascending order.
pub fn sample_indices(total: usize, sample_size: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(sample_size.min(total));
    indices.sort_unstable();
    indices
}

/// Truncates one tokenized sentence, or `None` when it is too short.
pub fn fixed_length(source_index: usize, mut tokens: Vec<TokenId>, seq_len: usize) -> Option<SequenceRecord> {
    if tokens.len() < seq_len {
        return None;
    }
    let continuation = tokens.get(seq_len).copied();
    tokens.truncate(seq_len);
    Some(SequenceRecord {
        source_index,
        tokens,
        continuation,
    })
}

/// Samples, tokenizes, filters and truncates. Output keeps source order.
pub fn select<S: AsRef<str>>(
    sentences: &[S],
    vocab: &Vocab,
    params: &SelectionParams,
) -> Result<(Vec<SequenceRecord>, CorpusCounts), CorpusError> {
    params.validate()?;
    let sampled = sample_indices(sentences.len(), params.sample_size, params.seed);
    let records: Vec<SequenceRecord> = sampled
        .iter()
        .filter_map(|&idx| fixed_length(idx, vocab.encode(sentences[idx].as_ref()), params.seq_len))
        .collect();
    let counts = CorpusCounts {
        read: sentences.len(),
        sampled: sampled.len(),
        kept: records.len(),
    };
    if records.is_empty() {
        return Err(CorpusError::Empty {
            read: counts.read,
            sampled: counts.sampled,
            seq_len: params.seq_len,
        });
    }
    Ok((records, counts))
}
