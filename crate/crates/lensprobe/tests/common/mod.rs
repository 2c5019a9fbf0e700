#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lensprobe::analyze::RunConfig;
use lensprobe::io::{self, CorpusFormat, CorpusSpec};
use lensprobe_core::{ModelConfig, Vocab};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_corpus() -> PathBuf {
    repo_root().join("fixtures/corpus/sentences.txt")
}

pub fn gpt2_dir() -> PathBuf {
    repo_root().join("fixtures/gpt2")
}

/// Paths of a toy checkpoint with a small byte-level vocabulary.
pub struct ToyFiles {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub merges: PathBuf,
}

/// Byte-level vocabulary extended by the first 200 GPT-2 merges, and a
/// 2-block width-16 checkpoint over it.
pub fn write_toy(dir: &Path) -> ToyFiles {
    let text = std::fs::read_to_string(gpt2_dir().join("merges.txt")).unwrap();
    let merges = text
        .lines()
        .skip(1)
        .take(200)
        .map(|l| {
            let (a, b) = l.split_once(' ').unwrap();
            (a.to_owned(), b.to_owned())
        })
        .collect();
    let vocab = Vocab::byte_level(merges).unwrap();
    let config = ModelConfig {
        layers: 2,
        width: 16,
        heads: 2,
        vocab_size: vocab.len(),
        context_len: 64,
    };
    let checkpoint = dir.join("toy.safetensors");
    io::save_toy_checkpoint(config, lensprobe::TOY_SEED, &checkpoint).unwrap();
    let (vocab, merges) = io::save_vocab(&vocab, dir).unwrap();
    ToyFiles {
        checkpoint,
        vocab,
        merges,
    }
}

pub fn toy_run_config(files: &ToyFiles, out: &Path) -> RunConfig {
    let corpus = CorpusSpec {
        path: fixture_corpus(),
        format: CorpusFormat::Lines,
        sample_size: 30_000,
        seed: 0,
        seq_len: 40,
    };
    let mut cfg = RunConfig::new(
        files.checkpoint.clone(),
        files.vocab.clone(),
        files.merges.clone(),
        corpus,
        out.to_path_buf(),
    );
    cfg.model_name = Some("toy".into());
    cfg.run_id = Some("test".into());
    cfg.timestamp = humantime::parse_rfc3339("2024-01-01T00:00:00Z").unwrap();
    cfg
}
