//! The `analyze` pipeline: ingest, forward, lens, aggregate, report.

use std::path::PathBuf;
use std::time::SystemTime;

use lensprobe_core::analysis::DEFAULT_BINS;
use lensprobe_core::corpus::CorpusCounts;
use lensprobe_core::LensMode;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{self, CorpusSpec};
use crate::report::{self, PlotSelection, ReportInputs, RunMetadata};
use crate::runner::{self, RunnerOptions};

fn lens_mode_str<S: serde::Serializer>(mode: &LensMode, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(mode.as_str())
}

fn timestamp_str<S: serde::Serializer>(t: &SystemTime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&humantime::format_rfc3339_seconds(*t).to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub merges: PathBuf,
    pub corpus: CorpusSpec,
    #[serde(serialize_with = "lens_mode_str")]
    pub lens_mode: LensMode,
    pub workers: usize,
    pub bins: usize,
    pub out: PathBuf,
    /// Layers and positions plotted as separate series; `None` picks quarters.
    pub plot_layers: Option<Vec<usize>>,
    pub plot_positions: Option<Vec<usize>>,
    pub exact_quantiles: bool,
    /// Defaults to the checkpoint file stem.
    pub model_name: Option<String>,
    /// Defaults to one derived from the timestamp.
    pub run_id: Option<String>,
    #[serde(serialize_with = "timestamp_str")]
    pub timestamp: SystemTime,
}

impl RunConfig {
    pub fn new(checkpoint: PathBuf, vocab: PathBuf, merges: PathBuf, corpus: CorpusSpec, out: PathBuf) -> Self {
        Self {
            checkpoint,
            vocab,
            merges,
            corpus,
            lens_mode: LensMode::default(),
            workers: 1,
            bins: DEFAULT_BINS,
            out,
            plot_layers: None,
            plot_positions: None,
            exact_quantiles: false,
            model_name: None,
            run_id: None,
            timestamp: SystemTime::now(),
        }
    }

    /// Checks everything that can be checked without loading anything.
    pub fn validate(&self) -> Result<()> {
        self.corpus.params().validate()?;
        if self.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("histogram bin count must be at least 1".into()));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                return Err(Error::Config(format!("invalid run id `{id}`")));
            }
        }
        for path in [&self.checkpoint, &self.vocab, &self.merges, &self.corpus.path] {
            std::fs::metadata(path).map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }

    pub fn timestamp_string(&self) -> String {
        humantime::format_rfc3339_seconds(self.timestamp).to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        let id = self.run_id.clone().unwrap_or_else(|| {
            // 2024-05-01T12:00:00Z -> 20240501T120000Z
            self.timestamp_string().chars().filter(|c| !matches!(c, '-' | ':')).collect()
        });
        self.out.join(format!("run-{id}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub counts: CorpusCounts,
    /// Mean entropy at the last layer and last position.
    pub final_entropy: f64,
    /// Pooled top-1 error rate of the last layer over all positions with a
    /// known next token.
    pub final_error_rate: Option<f64>,
}

/// Runs the whole pipeline. `progress` receives human-readable status lines.
pub fn analyze(cfg: &RunConfig, progress: &(dyn Fn(&str) + Sync)) -> Result<RunSummary> {
    cfg.validate()?;
    let vocab = io::load_vocab(&cfg.vocab, &cfg.merges)?;
    let ckpt = io::load_checkpoint(&cfg.checkpoint)?;
    let c = ckpt.config;
    if vocab.len() != c.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the checkpoint expects {}",
            vocab.len(),
            c.vocab_size
        )));
    }
    if cfg.corpus.seq_len > c.context_len {
        return Err(Error::Config(format!(
            "sequence length {} exceeds the context length {}",
            cfg.corpus.seq_len, c.context_len
        )));
    }
    let defaults = PlotSelection::default_for(c.layers, cfg.corpus.seq_len);
    let selection = PlotSelection {
        layers: cfg.plot_layers.clone().unwrap_or(defaults.layers),
        positions: cfg.plot_positions.clone().unwrap_or(defaults.positions),
    };
    selection.validate(c.layers, cfg.corpus.seq_len)?;
    progress(&format!(
        "model: {} blocks, width {}, {} heads, {} tokens",
        c.layers, c.width, c.heads, c.vocab_size
    ));

    let (sequences, counts) = io::ingest(&cfg.corpus, &vocab)?;
    progress(&format!(
        "corpus: {} read, {} sampled, {} kept",
        counts.read, counts.sampled, counts.kept
    ));

    let total = sequences.len();
    let step = (total / 10).max(1);
    let opts = RunnerOptions {
        mode: cfg.lens_mode,
        workers: cfg.workers,
        bins: cfg.bins,
        keep_records: cfg.exact_quantiles,
    };
    let out = runner::run(&ckpt, &sequences, &opts, &|done| {
        if done % step == 0 || done == total {
            progress(&format!("analyzed {done}/{total} sequences"));
        }
    })?;

    let meta = RunMetadata {
        model: cfg.model_name.clone().unwrap_or_else(|| {
            cfg.checkpoint
                .file_stem()
                .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
        }),
        lens_mode: cfg.lens_mode.as_str().into(),
        layers: c.layers,
        vocab_size: c.vocab_size,
        seq_len: cfg.corpus.seq_len,
        sentences_read: counts.read,
        sentences_sampled: counts.sampled,
        sequences_kept: counts.kept,
        seed: cfg.corpus.seed,
        bins: cfg.bins,
        timestamp: cfg.timestamp_string(),
    };
    let dir = cfg.run_dir();
    let inputs = ReportInputs {
        meta: &meta,
        aggregate: &out.aggregate,
        selection: &selection,
        config: serde_json::to_value(cfg).expect("plain struct"),
        exact: out.records.as_deref().map(|r| (sequences.as_slice(), r)),
    };
    let files = report::write_report(&dir, &inputs)?;

    let m = out.aggregate.finalize()?;
    let last = c.layers;
    let row = last * m.positions..(last + 1) * m.positions;
    let errors: u64 = m.errors[row.clone()].iter().sum();
    let known: u64 = m.error_denominator[row].iter().sum();
    Ok(RunSummary {
        dir,
        files,
        counts,
        final_entropy: m.mean_at(last, m.positions),
        final_error_rate: (known > 0).then(|| errors as f64 / known as f64),
    })
}
