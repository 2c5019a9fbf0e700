use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::SystemTime;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lensprobe::analyze::{self, RunConfig};
use lensprobe::io::{self, CorpusFormat, CorpusSpec};
use lensprobe::selftest::{self, Fault};
use lensprobe::{Error, TOY_SEED};
use lensprobe_core::analysis::DEFAULT_BINS;
use lensprobe_core::corpus::DEFAULT_SEQ_LEN;
use lensprobe_core::{LensMode, ModelConfig, TokenId, Vocab};

/// Logit-lens entropy profiling of GPT-2 style checkpoints.
#[derive(Debug, Parser)]
#[command(name = "lensprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lens every layer and position over a corpus and write a report.
    Analyze(Box<AnalyzeArgs>),
    /// Print the token ids of TEXT (or stdin), one per line.
    Tokenize(TokenizeArgs),
    /// Run the built-in property suites on a generated toy checkpoint.
    Selftest(SelftestArgs),
    /// Write a seeded random checkpoint with a byte-level vocabulary.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Lines,
    Jsonl,
}

#[derive(Debug, Args)]
struct VocabArgs {
    /// GPT-2 style vocab.json.
    #[arg(long, env = "LENSPROBE_VOCAB")]
    vocab: PathBuf,
    /// GPT-2 style merges.txt.
    #[arg(long, env = "LENSPROBE_MERGES")]
    merges: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Checkpoint in safetensors layout.
    #[arg(long, env = "LENSPROBE_CHECKPOINT")]
    checkpoint: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    /// Sentence file.
    #[arg(long, env = "LENSPROBE_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "LENSPROBE_FORMAT", value_enum, default_value = "lines")]
    format: Format,
    /// JSON field holding the sentence in JSONL input.
    #[arg(long, env = "LENSPROBE_TEXT_FIELD", default_value = "text")]
    text_field: String,
    /// Sentences drawn from the corpus before length filtering.
    #[arg(long, env = "LENSPROBE_SAMPLE_SIZE", default_value_t = 30_000)]
    sample_size: usize,
    #[arg(long, env = "LENSPROBE_SEED", default_value_t = 0)]
    seed: u64,
    /// Tokens per sequence; shorter sentences are dropped.
    #[arg(long, env = "LENSPROBE_SEQ_LEN", default_value_t = DEFAULT_SEQ_LEN)]
    seq_len: usize,
    /// `final_norm` applies the final layer norm before unembedding, `raw` does not.
    #[arg(long, env = "LENSPROBE_LENS_MODE", default_value = "final_norm")]
    lens_mode: LensMode,
    /// Defaults to the available parallelism.
    #[arg(long, env = "LENSPROBE_WORKERS")]
    workers: Option<usize>,
    /// Histogram bins per cell over [0, log2 M].
    #[arg(long, env = "LENSPROBE_BINS", default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Parent directory of the `run-<id>` output directory.
    #[arg(long, env = "LENSPROBE_OUT", default_value = "runs")]
    out: PathBuf,
    /// Keep every record, write records.csv and exact quantiles.
    #[arg(long, env = "LENSPROBE_EXACT_QUANTILES")]
    exact_quantiles: bool,
    /// Layers drawn in the per-position plots, e.g. `0,6,12`.
    #[arg(long, env = "LENSPROBE_PLOT_LAYERS", value_delimiter = ',')]
    plot_layers: Option<Vec<usize>>,
    /// Positions drawn in the per-layer plot, e.g. `1,20,40`.
    #[arg(long, env = "LENSPROBE_PLOT_POSITIONS", value_delimiter = ',')]
    plot_positions: Option<Vec<usize>>,
    /// Model name in report metadata; defaults to the checkpoint file stem.
    #[arg(long, env = "LENSPROBE_MODEL_NAME")]
    model_name: Option<String>,
    /// Output directory suffix; defaults to one derived from the timestamp.
    #[arg(long, env = "LENSPROBE_RUN_ID")]
    run_id: Option<String>,
    /// RFC 3339 time recorded in the report instead of the current time.
    #[arg(long, env = "LENSPROBE_TIMESTAMP", value_parser = humantime::parse_rfc3339_weak)]
    timestamp: Option<SystemTime>,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    #[command(flatten)]
    vocab: VocabArgs,
    /// Treat the input as whitespace-separated ids and print the text.
    #[arg(long)]
    decode: bool,
    text: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InjectedFault {
    SoftmaxStabilization,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<InjectedFault>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    /// Directory receiving toy.safetensors, vocab.json and merges.txt.
    #[arg(long)]
    out: PathBuf,
    /// Take the first `--merge-count` merges from this merges.txt.
    #[arg(long)]
    merges_from: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    merge_count: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    context_len: usize,
    #[arg(long, default_value_t = TOY_SEED)]
    seed: u64,
}

fn cmd_analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let format = match args.format {
        Format::Lines => CorpusFormat::Lines,
        Format::Jsonl => CorpusFormat::Jsonl {
            field: args.text_field,
        },
    };
    let corpus = CorpusSpec {
        path: args.corpus,
        format,
        sample_size: args.sample_size,
        seed: args.seed,
        seq_len: args.seq_len,
    };
    let mut cfg = RunConfig::new(args.checkpoint, args.vocab.vocab, args.vocab.merges, corpus, args.out);
    cfg.lens_mode = args.lens_mode;
    cfg.workers = match args.workers {
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    cfg.bins = args.bins;
    cfg.exact_quantiles = args.exact_quantiles;
    cfg.plot_layers = args.plot_layers;
    cfg.plot_positions = args.plot_positions;
    cfg.model_name = args.model_name;
    cfg.run_id = args.run_id;
    if let Some(t) = args.timestamp {
        cfg.timestamp = t;
    }

    let summary = analyze::analyze(&cfg, &|line| eprintln!("{line}"))?;
    println!("report: {}", summary.dir.display());
    println!("sequences kept: {}", summary.counts.kept);
    println!(
        "final layer, final position: mean entropy {:.4} bits",
        summary.final_entropy
    );
    match summary.final_error_rate {
        Some(e) => println!("final layer top-1 error rate: {:.4}", e),
        None => println!("final layer top-1 error rate: n/a"),
    }
    Ok(())
}

fn cmd_tokenize(args: TokenizeArgs) -> anyhow::Result<()> {
    let vocab = io::load_vocab(&args.vocab.vocab, &args.vocab.merges)?;
    let text = match args.text {
        Some(t) => t,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
            s
        }
    };
    if args.decode {
        let ids = text
            .split_whitespace()
            .map(|t| t.parse().map(TokenId))
            .collect::<Result<Vec<_>, _>>()
            .context("token ids must be unsigned integers")?;
        print!("{}", vocab.decode(&ids)?);
    } else {
        for id in vocab.encode(&text) {
            println!("{}", id.0);
        }
    }
    Ok(())
}

fn cmd_selftest(args: SelftestArgs) -> anyhow::Result<()> {
    let fault = match args.inject_fault {
        Some(InjectedFault::SoftmaxStabilization) => Fault::UnstableSoftmax,
        None => Fault::None,
    };
    let outcomes = selftest::run(fault);
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        bail!("{failed} of {} suites failed", outcomes.len());
    }
    Ok(())
}

fn cmd_toy(args: ToyArgs) -> anyhow::Result<()> {
    let merges = match &args.merges_from {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let merges: Vec<(String, String)> = text
                .lines()
                .filter(|l| !l.starts_with("#version") && !l.trim().is_empty())
                .take(args.merge_count)
                .map(|l| {
                    let (a, b) = l.split_once(' ').with_context(|| format!("{}: bad merge `{l}`", path.display()))?;
                    Ok((a.to_owned(), b.to_owned()))
                })
                .collect::<anyhow::Result<_>>()?;
            if merges.len() < args.merge_count {
                bail!("{} holds only {} merges", path.display(), merges.len());
            }
            merges
        }
        None if args.merge_count > 0 => bail!("--merge-count needs --merges-from"),
        None => Vec::new(),
    };
    let vocab = Vocab::byte_level(merges)?;
    let config = ModelConfig {
        layers: args.layers,
        width: args.width,
        heads: args.heads,
        vocab_size: vocab.len(),
        context_len: args.context_len,
    };
    let path = args.out.join("toy.safetensors");
    io::save_toy_checkpoint(config, args.seed, &path)?;
    let (v, m) = io::save_vocab(&vocab, &args.out)?;
    for p in [&path, &v, &m] {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(*a),
        Command::Tokenize(a) => cmd_tokenize(a),
        Command::Selftest(a) => cmd_selftest(a),
        Command::Toy(a) => cmd_toy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
