//! Loading vocabularies, checkpoints and corpora from disk.

use std::fs;
use std::path::{Path, PathBuf};

use lensprobe_core::archive::TensorArchive;
use lensprobe_core::corpus::{self, CorpusCounts, SelectionParams, SequenceRecord};
use lensprobe_core::{Checkpoint, ModelConfig, Vocab};
use serde::Serialize;

use crate::error::{Error, Result};

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a GPT-2 style `vocab.json` + `merges.txt` pair.
pub fn load_vocab(vocab: &Path, merges: &Path) -> Result<Vocab> {
    let vocab_json = read_string(vocab)?;
    let merges_txt = read_string(merges)?;
    Vocab::from_json_and_merges(&vocab_json, &merges_txt).map_err(|source| Error::Vocab {
        path: vocab.to_path_buf(),
        source,
    })
}

/// Writes `vocab` as `vocab.json` and `merges.txt` under `dir`.
pub fn save_vocab(vocab: &Vocab, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let map: serde_json::Map<String, serde_json::Value> = (0..vocab.len() as u32)
        .map(|id| {
            let token = vocab.token(lensprobe_core::TokenId(id)).expect("dense ids");
            (token.to_owned(), serde_json::Value::from(id))
        })
        .collect();
    let vocab_path = dir.join("vocab.json");
    let json = serde_json::to_string(&map).expect("string keys");
    fs::write(&vocab_path, json).map_err(|e| Error::io(&vocab_path, e))?;

    let mut merges_txt = String::from("#version: 0.2\n");
    for (a, b) in vocab.merges() {
        merges_txt.push_str(a);
        merges_txt.push(' ');
        merges_txt.push_str(b);
        merges_txt.push('\n');
    }
    let merges_path = dir.join("merges.txt");
    fs::write(&merges_path, merges_txt).map_err(|e| Error::io(&merges_path, e))?;
    Ok((vocab_path, merges_path))
}

pub fn read_archive(path: &Path) -> Result<TensorArchive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorArchive::from_bytes(bytes).map_err(|source| Error::Archive {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let archive = read_archive(path)?;
    Checkpoint::from_archive(&archive).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let writer = ckpt.to_archive().map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, writer.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Generates the seeded toy checkpoint and writes it to `path`.
pub fn save_toy_checkpoint(config: ModelConfig, seed: u64, path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::toy(config, seed).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    save_checkpoint(&ckpt, path)?;
    Ok(ckpt)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One sentence per line.
    Lines,
    /// One JSON object per line; the sentence is the string under `field`.
    Jsonl { field: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusSpec {
    pub path: PathBuf,
    pub format: CorpusFormat,
    pub sample_size: usize,
    pub seed: u64,
    pub seq_len: usize,
}

impl CorpusSpec {
    pub fn params(&self) -> SelectionParams {
        SelectionParams {
            sample_size: self.sample_size,
            seed: self.seed,
            seq_len: self.seq_len,
        }
    }
}

/// Reads all sentences. Blank lines are sentences too, so line numbers and
/// source indices agree; they never survive the length filter.
pub fn read_sentences(path: &Path, format: &CorpusFormat) -> Result<Vec<String>> {
    let text = read_string(path)?;
    let lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let mut lines: Vec<&str> = lines.collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    match format {
        CorpusFormat::Lines => Ok(lines.into_iter().map(str::to_owned).collect()),
        CorpusFormat::Jsonl { field } => lines
            .into_iter()
            .enumerate()
            .map(|(n, line)| {
                let bad = |message: String| Error::CorpusFormat {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message,
                };
                let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
                match value.get(field) {
                    Some(serde_json::Value::String(s)) => Ok(s.clone()),
                    Some(_) => Err(bad(format!("field `{field}` is not a string"))),
                    None => Err(bad(format!("missing field `{field}`"))),
                }
            })
            .collect(),
    }
}

pub fn ingest(spec: &CorpusSpec, vocab: &Vocab) -> Result<(Vec<SequenceRecord>, CorpusCounts)> {
    spec.params().validate()?;
    let sentences = read_sentences(&spec.path, &spec.format)?;
    Ok(corpus::select(&sentences, vocab, &spec.params())?)
}
