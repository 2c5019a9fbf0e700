//! Parallel lensing of a sequence list.
//!
//! Sequence `k` goes to worker `k % workers`; each worker folds its share into
//! a private aggregate in index order and the partial aggregates are merged
//! in worker order, so the result depends only on the inputs and the worker
//! count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use lensprobe_core::analysis::EntropyAggregate;
use lensprobe_core::corpus::SequenceRecord;
use lensprobe_core::lens::{self, LensMode};
use lensprobe_core::{model, Checkpoint, LensRecord};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunnerOptions {
    pub mode: LensMode,
    pub workers: usize,
    pub bins: usize,
    /// Keep every record, in sequence order, for exact quantiles.
    pub keep_records: bool,
}

#[derive(Debug, Clone)]
pub struct RunnerOutput {
    pub aggregate: EntropyAggregate,
    /// Per-sequence records when requested, indexed like the input.
    pub records: Option<Vec<Vec<LensRecord>>>,
}

fn lens_one(ckpt: &Checkpoint, seq: &SequenceRecord, mode: LensMode) -> Result<Vec<LensRecord>> {
    let grid = model::forward_with_taps(ckpt, &seq.tokens)?;
    Ok(lens::lens_sequence(ckpt, &grid, &seq.tokens, seq.continuation, mode)?)
}

type Partial = (EntropyAggregate, Vec<(usize, Vec<LensRecord>)>);

/// Runs forward pass, lens and accumulation over `sequences`. `progress` is
/// called with the number of sequences finished so far.
pub fn run(
    ckpt: &Checkpoint,
    sequences: &[SequenceRecord],
    opts: &RunnerOptions,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<RunnerOutput> {
    if opts.workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let positions = match sequences.first() {
        Some(s) => s.tokens.len(),
        None => return Err(Error::Config("no sequences to analyze".into())),
    };
    let cfg = &ckpt.config;
    let empty = EntropyAggregate::new(cfg.layers + 1, positions, opts.bins, cfg.vocab_size)?;
    let done = AtomicUsize::new(0);

    let worker = |w: usize| -> Result<Partial> {
        let mut agg = empty.clone();
        let mut kept = Vec::new();
        for k in (w..sequences.len()).step_by(opts.workers) {
            let records = lens_one(ckpt, &sequences[k], opts.mode)?;
            agg.accumulate(&records)?;
            if opts.keep_records {
                kept.push((k, records));
            }
            progress(done.fetch_add(1, Ordering::Relaxed) + 1);
        }
        Ok((agg, kept))
    };

    let partials: Vec<Result<Partial>> = if opts.workers == 1 {
        vec![worker(0)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..opts.workers).map(|w| s.spawn(move || worker(w))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
                .collect()
        })
    };

    let mut aggregate = empty;
    let mut records = opts.keep_records.then(|| vec![Vec::new(); sequences.len()]);
    for partial in partials {
        let (agg, kept) = partial?;
        aggregate.merge_from(&agg)?;
        if let Some(all) = records.as_mut() {
            for (k, r) in kept {
                all[k] = r;
            }
        }
    }
    Ok(RunnerOutput { aggregate, records })
}
