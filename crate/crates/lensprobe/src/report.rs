//! Run artifacts: CSV matrices, distribution JSON, SVG plots and metadata.
//!
//! Layout under the output directory:
//! `run-<id>/{entropy.csv, errors.csv, distributions.json, plots/*.svg, meta.json}`
//! plus `records.csv` when exact quantiles are requested.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lensprobe_core::analysis::{exact_quantiles, EntropyAggregate, EntropyMatrix, QUANTILE_LEVELS};
use lensprobe_core::corpus::SequenceRecord;
use lensprobe_core::LensRecord;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::svg::{self, Axes, LineSeries};

/// Provenance stamped into every emitted file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub model: String,
    pub lens_mode: String,
    pub layers: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub sentences_read: usize,
    pub sentences_sampled: usize,
    pub sequences_kept: usize,
    pub seed: u64,
    pub bins: usize,
    pub timestamp: String,
}

impl RunMetadata {
    fn comment_lines(&self) -> String {
        let value = serde_json::to_value(self).expect("plain struct");
        let mut out = String::new();
        for (key, v) in value.as_object().expect("struct serializes to an object") {
            let v = v.as_str().map_or_else(|| v.to_string(), str::to_owned);
            let _ = writeln!(out, "# {key}: {v}");
        }
        out
    }

    fn json(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }
}

fn check_nonempty(m: &EntropyMatrix) -> Result<()> {
    if m.count.is_empty() || m.count.contains(&0) {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub const ENTROPY_HEADER: &str = "layer,position,mean_entropy_bits,stdev_bits,error_rate,count";
pub const ERRORS_HEADER: &str = "layer,position,error_rate,errors,known_next";

pub fn entropy_csv(m: &EntropyMatrix, meta: &RunMetadata) -> Result<String> {
    check_nonempty(m)?;
    let mut out = meta.comment_lines();
    out.push_str(ENTROPY_HEADER);
    out.push('\n');
    for j in 0..m.layers {
        for i in 1..=m.positions {
            let c = j * m.positions + i - 1;
            let _ = writeln!(
                out,
                "{j},{i},{:.6},{:.6},{},{}",
                m.mean[c],
                m.stdev[c],
                fmt_opt(m.error_rate[c]),
                m.count[c]
            );
        }
    }
    Ok(out)
}

pub fn errors_csv(m: &EntropyMatrix, meta: &RunMetadata) -> Result<String> {
    check_nonempty(m)?;
    let mut out = meta.comment_lines();
    out.push_str(ERRORS_HEADER);
    out.push('\n');
    for j in 0..m.layers {
        for i in 1..=m.positions {
            let c = j * m.positions + i - 1;
            let _ = writeln!(
                out,
                "{j},{i},{},{},{}",
                fmt_opt(m.error_rate[c]),
                m.errors[c],
                m.error_denominator[c]
            );
        }
    }
    Ok(out)
}

/// One parsed row of `entropy.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub layer: usize,
    pub position: usize,
    pub mean: f64,
    pub stdev: f64,
    pub error_rate: Option<f64>,
    pub count: u64,
}

/// Parses `entropy.csv`, skipping `#` comment lines.
pub fn parse_entropy_csv(text: &str) -> Result<Vec<EntropyRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(ENTROPY_HEADER) {
        return Err(Error::Report("entropy.csv: unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = || Error::Report(format!("entropy.csv: malformed row {}: {line}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(EntropyRow {
                layer: f[0].parse().map_err(|_| bad())?,
                position: f[1].parse().map_err(|_| bad())?,
                mean: f[2].parse().map_err(|_| bad())?,
                stdev: f[3].parse().map_err(|_| bad())?,
                error_rate: if f[4].is_empty() {
                    None
                } else {
                    Some(f[4].parse().map_err(|_| bad())?)
                },
                count: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Per-sequence records in a flat table, for offline analysis.
pub fn records_csv(sequences: &[SequenceRecord], records: &[Vec<LensRecord>], meta: &RunMetadata) -> String {
    let mut out = meta.comment_lines();
    out.push_str("sequence,source_index,layer,position,entropy_bits,top1,correct\n");
    for (k, (seq, recs)) in sequences.iter().zip(records).enumerate() {
        for r in recs {
            let correct = match r.correct {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            let _ = writeln!(
                out,
                "{k},{},{},{},{:.9},{},{correct}",
                seq.source_index, r.layer, r.position, r.entropy_bits, r.top1.0
            );
        }
    }
    out
}

/// Histogram summaries of every cell, plus exact quantiles when records are
/// supplied.
pub fn distributions_json(
    agg: &EntropyAggregate,
    records: Option<&[Vec<LensRecord>]>,
    meta: &RunMetadata,
) -> Result<String> {
    let mut cells = Vec::with_capacity(agg.layers() * agg.positions());
    let mut samples: Vec<Vec<f64>> = Vec::new();
    if let Some(records) = records {
        samples = vec![Vec::with_capacity(records.len()); agg.layers() * agg.positions()];
        for r in records.iter().flatten() {
            samples[r.layer * agg.positions() + r.position - 1].push(r.entropy_bits);
        }
    }
    let mut bin_width = 0.0;
    for j in 0..agg.layers() {
        for i in 1..=agg.positions() {
            let view = agg.distribution_view(i, j).map_err(|_| Error::EmptyCorpus)?;
            bin_width = view.bin_width;
            let mut cell = json!({
                "layer": j,
                "position": i,
                "count": view.count,
                "mean": view.mean,
                "quantiles": view.quantiles,
                "probabilities": view.probabilities,
            });
            if let Some(values) = samples.get_mut(j * agg.positions() + i - 1) {
                cell["exact_quantiles"] = json!(exact_quantiles(values));
            }
            cells.push(cell);
        }
    }
    let doc = json!({
        "metadata": meta,
        "bins": agg.bins(),
        "max_entropy_bits": agg.max_entropy(),
        "bin_width": bin_width,
        "quantile_levels": QUANTILE_LEVELS,
        "cells": cells,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json values");
    text.push('\n');
    Ok(text)
}

/// Which layers and positions get their own plot series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlotSelection {
    pub layers: Vec<usize>,
    pub positions: Vec<usize>,
}

impl PlotSelection {
    /// Layers `0, L/4, L/2, 3L/4, L` and positions `1, N/4, N/2, 3N/4, N`,
    /// deduplicated.
    pub fn default_for(layers: usize, positions: usize) -> Self {
        let quarters = |top: usize, min: usize| {
            let mut v: Vec<usize> = [0, top / 4, top / 2, 3 * top / 4, top].iter().map(|&x| x.max(min)).collect();
            v.dedup();
            v
        };
        Self {
            layers: quarters(layers, 0),
            positions: quarters(positions, 1),
        }
    }

    pub fn validate(&self, layers: usize, positions: usize) -> Result<()> {
        if let Some(j) = self.layers.iter().find(|&&j| j > layers) {
            return Err(Error::Config(format!("plot layer {j} out of range 0..={layers}")));
        }
        if let Some(i) = self.positions.iter().find(|&&i| i == 0 || i > positions) {
            return Err(Error::Config(format!("plot position {i} out of range 1..={positions}")));
        }
        Ok(())
    }
}

/// File name and contents of each plot.
pub fn plots(
    agg: &EntropyAggregate,
    m: &EntropyMatrix,
    selection: &PlotSelection,
    meta: &RunMetadata,
) -> Result<Vec<(&'static str, String)>> {
    check_nonempty(m)?;
    selection.validate(m.layers - 1, m.positions)?;
    let meta_json = meta.json();
    let suffix = format!("{}, {} lens", meta.model, meta.lens_mode);

    let mut by_position = Vec::new();
    let mut errors = Vec::new();
    for &j in &selection.layers {
        let s = m.horizontal_view(j)?;
        let label = format!("layer {j}");
        by_position.push(LineSeries {
            label: label.clone(),
            points: s.index.iter().zip(&s.mean).map(|(&i, &h)| (i as f64, h)).collect(),
        });
        let points: Vec<(f64, f64)> = s
            .index
            .iter()
            .zip(&s.error_rate)
            .filter_map(|(&i, e)| e.map(|e| (i as f64, e)))
            .collect();
        if points.len() >= 2 {
            errors.push(LineSeries { label, points });
        }
    }
    let mut by_layer = Vec::new();
    for &i in &selection.positions {
        let s = m.vertical_view(i)?;
        by_layer.push(LineSeries {
            label: format!("position {i}"),
            points: s.index.iter().zip(&s.mean).map(|(&j, &h)| (j as f64, h)).collect(),
        });
    }
    let dists = (0..m.layers)
        .map(|j| agg.distribution_view(m.positions, j))
        .collect::<Result<Vec<_>, _>>()?;

    let axes = |title: &str, x: &str, y: &str| Axes {
        title: format!("{title} ({suffix})"),
        x_label: x.into(),
        y_label: y.into(),
        y_from_zero: true,
    };
    let mut out = vec![
        (
            "entropy_vs_position.svg",
            svg::render_lines(
                &by_position,
                &axes("Mean entropy by token position", "token position", "entropy (bits)"),
                &meta_json,
            )?,
        ),
        (
            "entropy_vs_layer.svg",
            svg::render_lines(
                &by_layer,
                &axes("Mean entropy by layer", "layer", "entropy (bits)"),
                &meta_json,
            )?,
        ),
        (
            "final_token_ridgeline.svg",
            svg::render_ridgeline(
                &dists,
                &format!("Entropy distribution at position {} ({suffix})", m.positions),
                &meta_json,
            )?,
        ),
    ];
    if !errors.is_empty() {
        out.push((
            "error_vs_position.svg",
            svg::render_lines(
                &errors,
                &axes("Top-1 error rate by token position", "token position", "error rate"),
                &meta_json,
            )?,
        ));
    }
    Ok(out)
}

/// Everything a report needs.
pub struct ReportInputs<'a> {
    pub meta: &'a RunMetadata,
    pub aggregate: &'a EntropyAggregate,
    pub selection: &'a PlotSelection,
    /// The run configuration, copied into `meta.json`.
    pub config: serde_json::Value,
    /// Sequences and their records, for exact quantiles.
    pub exact: Option<(&'a [SequenceRecord], &'a [Vec<LensRecord>])>,
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the full bundle into `dir` (created if needed) and returns the
/// written paths.
pub fn write_report(dir: &Path, inputs: &ReportInputs) -> Result<Vec<PathBuf>> {
    let m = inputs.aggregate.finalize().map_err(|_| Error::EmptyCorpus)?;
    check_nonempty(&m)?;
    let meta = inputs.meta;
    // render everything before touching the file system
    let entropy = entropy_csv(&m, meta)?;
    let errors = errors_csv(&m, meta)?;
    let dists = distributions_json(inputs.aggregate, inputs.exact.map(|e| e.1), meta)?;
    let plots = plots(inputs.aggregate, &m, inputs.selection, meta)?;
    let meta_json = json!({
        "metadata": meta,
        "config": inputs.config,
        "plot_selection": inputs.selection,
    });

    let plot_dir = dir.join("plots");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let mut paths = vec![
        write(dir.join("entropy.csv"), &entropy)?,
        write(dir.join("errors.csv"), &errors)?,
        write(dir.join("distributions.json"), &dists)?,
    ];
    for (name, svg) in &plots {
        paths.push(write(plot_dir.join(name), svg)?);
    }
    if let Some((seqs, recs)) = inputs.exact {
        paths.push(write(dir.join("records.csv"), &records_csv(seqs, recs, meta))?);
    }
    let mut meta_text = serde_json::to_string_pretty(&meta_json).expect("json values");
    meta_text.push('\n');
    paths.push(write(dir.join("meta.json"), &meta_text)?);
    Ok(paths)
}
