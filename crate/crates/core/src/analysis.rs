//! Corpus-level aggregation of lens records.
//!
//! An [`EntropyAggregate`] holds, for every `(layer, position)` cell, the
//! sample count, sums and a fixed-bin histogram over `[0, log2 M]`. All
//! fields add, so aggregates built on different workers merge exactly on
//! counts and stably on sums. Each sequence contributes once per cell.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::lens::LensRecord;

/// Default histogram resolution.
pub const DEFAULT_BINS: usize = 128;

/// Quantile levels reported by [`DistributionView`].
pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.50, 0.75, 0.95];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no samples in cell layer {layer}, position {position}")]
    EmptyCell { layer: usize, position: usize },
    #[error("layer {layer} out of range 0..={max}")]
    LayerRange { layer: usize, max: usize },
    #[error("position {position} out of range 1..={max}")]
    PositionRange { position: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub min: f64,
    pub max: f64,
    /// Top-1 misses among records with a known next token.
    pub errors: u64,
    /// Records with a known next token.
    pub error_denominator: u64,
    pub histogram: Vec<u64>,
}

impl CellStats {
    fn new(bins: usize) -> Self {
        Self {
            count: 0,
            sum: 0.0,
            sum_sq: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            errors: 0,
            error_denominator: 0,
            histogram: vec![0; bins],
        }
    }

    fn merge_from(&mut self, other: &CellStats) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.errors += other.errors;
        self.error_denominator += other.error_denominator;
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
    }

    fn mean(&self) -> f64 {
        // the exact mean lies within [min, max]; clamp away rounding
        (self.sum / self.count as f64).clamp(self.min, self.max)
    }

    fn stdev(&self) -> f64 {
        if self.min == self.max {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        libm::sqrt((self.sum_sq / n - mean * mean).max(0.0))
    }
}

/// Mergeable per-cell statistics over `(L+1) x N` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyAggregate {
    layers: usize,
    positions: usize,
    bins: usize,
    max_entropy: f64,
    sequences: u64,
    cells: Vec<CellStats>,
}

impl EntropyAggregate {
    /// `layers` counts tapped layers (`L + 1`); the histogram spans
    /// `[0, log2(vocab_size)]`.
    pub fn new(layers: usize, positions: usize, bins: usize, vocab_size: usize) -> Result<Self, AnalysisError> {
        if layers == 0 || positions == 0 || bins == 0 || vocab_size < 2 {
            return Err(AnalysisError::Shape(format!(
                "invalid aggregate layout: {layers} layers, {positions} positions, {bins} bins, vocabulary {vocab_size}"
            )));
        }
        Ok(Self {
            layers,
            positions,
            bins,
            max_entropy: libm::log2(vocab_size as f64),
            sequences: 0,
            cells: vec![CellStats::new(bins); layers * positions],
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Upper end of the histogram range, `log2 M`.
    pub fn max_entropy(&self) -> f64 {
        self.max_entropy
    }

    pub fn sequences(&self) -> u64 {
        self.sequences
    }

    fn index(&self, layer: usize, position: usize) -> Result<usize, AnalysisError> {
        if layer >= self.layers {
            return Err(AnalysisError::LayerRange {
                layer,
                max: self.layers - 1,
            });
        }
        if position == 0 || position > self.positions {
            return Err(AnalysisError::PositionRange {
                position,
                max: self.positions,
            });
        }
        Ok(layer * self.positions + position - 1)
    }

    /// Statistics of one cell; `position` is 1-based.
    pub fn cell(&self, layer: usize, position: usize) -> Result<&CellStats, AnalysisError> {
        Ok(&self.cells[self.index(layer, position)?])
    }

    fn bin_of(&self, h: f64) -> usize {
        let scaled = h / self.max_entropy * self.bins as f64;
        if scaled <= 0.0 {
            0
        } else {
            (scaled as usize).min(self.bins - 1)
        }
    }

    /// Adds one sequence's records. The records must cover every cell
    /// exactly once; the aggregate is unchanged on error.
    pub fn accumulate(&mut self, records: &[LensRecord]) -> Result<(), AnalysisError> {
        let expected = self.layers * self.positions;
        if records.len() != expected {
            return Err(AnalysisError::Shape(format!(
                "expected {expected} records ({} layers x {} positions), got {}",
                self.layers,
                self.positions,
                records.len()
            )));
        }
        let mut seen = vec![false; expected];
        for r in records {
            let idx = self.index(r.layer, r.position)?;
            if core::mem::replace(&mut seen[idx], true) {
                return Err(AnalysisError::Shape(format!(
                    "duplicate record for layer {}, position {}",
                    r.layer, r.position
                )));
            }
            if !r.entropy_bits.is_finite() {
                return Err(AnalysisError::Shape(format!(
                    "non-finite entropy at layer {}, position {}",
                    r.layer, r.position
                )));
            }
        }
        for r in records {
            let bin = self.bin_of(r.entropy_bits);
            let idx = r.layer * self.positions + r.position - 1;
            let cell = &mut self.cells[idx];
            let h = r.entropy_bits;
            cell.count += 1;
            cell.sum += h;
            cell.sum_sq += h * h;
            cell.min = cell.min.min(h);
            cell.max = cell.max.max(h);
            cell.histogram[bin] += 1;
            if let Some(correct) = r.correct {
                cell.error_denominator += 1;
                if !correct {
                    cell.errors += 1;
                }
            }
        }
        self.sequences += 1;
        Ok(())
    }

    /// Field-wise sum of two aggregates with the same layout.
    pub fn merge(&self, other: &EntropyAggregate) -> Result<EntropyAggregate, AnalysisError> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &EntropyAggregate) -> Result<(), AnalysisError> {
        if (self.layers, self.positions, self.bins) != (other.layers, other.positions, other.bins)
            || self.max_entropy.to_bits() != other.max_entropy.to_bits()
        {
            return Err(AnalysisError::Shape(format!(
                "cannot merge {}x{} ({} bins) with {}x{} ({} bins)",
                self.layers, self.positions, self.bins, other.layers, other.positions, other.bins
            )));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge_from(b);
        }
        self.sequences += other.sequences;
        Ok(())
    }

    /// Means, population standard deviations, error rates and histogram
    /// densities for every cell.
    pub fn finalize(&self) -> Result<EntropyMatrix, AnalysisError> {
        let mut m = EntropyMatrix {
            layers: self.layers,
            positions: self.positions,
            bins: self.bins,
            max_entropy: self.max_entropy,
            mean: Vec::with_capacity(self.cells.len()),
            stdev: Vec::with_capacity(self.cells.len()),
            error_rate: Vec::with_capacity(self.cells.len()),
            count: Vec::with_capacity(self.cells.len()),
            errors: Vec::with_capacity(self.cells.len()),
            error_denominator: Vec::with_capacity(self.cells.len()),
            density: Vec::with_capacity(self.cells.len() * self.bins),
        };
        let bin_width = self.max_entropy / self.bins as f64;
        for (idx, cell) in self.cells.iter().enumerate() {
            if cell.count == 0 {
                return Err(AnalysisError::EmptyCell {
                    layer: idx / self.positions,
                    position: idx % self.positions + 1,
                });
            }
            m.mean.push(cell.mean());
            m.stdev.push(cell.stdev());
            m.error_rate
                .push((cell.error_denominator > 0).then(|| cell.errors as f64 / cell.error_denominator as f64));
            m.count.push(cell.count);
            m.errors.push(cell.errors);
            m.error_denominator.push(cell.error_denominator);
            let scale = 1.0 / (cell.count as f64 * bin_width);
            m.density.extend(cell.histogram.iter().map(|&c| c as f64 * scale));
        }
        Ok(m)
    }

    /// Histogram and interpolated quantiles of one cell.
    pub fn distribution_view(&self, position: usize, layer: usize) -> Result<DistributionView, AnalysisError> {
        let cell = self.cell(layer, position)?;
        if cell.count == 0 {
            return Err(AnalysisError::EmptyCell { layer, position });
        }
        let bin_width = self.max_entropy / self.bins as f64;
        let n = cell.count as f64;
        let quantiles = QUANTILE_LEVELS.map(|q| histogram_quantile(&cell.histogram, bin_width, q));
        Ok(DistributionView {
            layer,
            position,
            count: cell.count,
            mean: cell.mean(),
            max_entropy: self.max_entropy,
            bin_width,
            probabilities: cell.histogram.iter().map(|&c| c as f64 / n).collect(),
            quantiles,
        })
    }
}

/// Quantile from a histogram, interpolating linearly inside the bin where
/// the cumulative count reaches `q * n`.
pub fn histogram_quantile(histogram: &[u64], bin_width: f64, q: f64) -> f64 {
    let total: u64 = histogram.iter().sum();
    let target = q * total as f64;
    let mut below = 0u64;
    let mut last_nonempty = 0;
    for (b, &c) in histogram.iter().enumerate() {
        if c == 0 {
            continue;
        }
        last_nonempty = b;
        let above = below + c;
        if (above as f64) >= target {
            let frac = ((target - below as f64) / c as f64).clamp(0.0, 1.0);
            return (b as f64 + frac) * bin_width;
        }
        below = above;
    }
    (last_nonempty as f64 + 1.0) * bin_width
}

/// Quantiles of raw samples, interpolating linearly between order
/// statistics at rank `q (n - 1)`. Sorts `values` in place.
pub fn exact_quantiles(values: &mut [f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let last = values.len() - 1;
    Some(QUANTILE_LEVELS.map(|q| {
        let rank = q * last as f64;
        let lo = rank as usize;
        let hi = (lo + 1).min(last);
        let frac = rank - lo as f64;
        values[lo] + (values[hi] - values[lo]) * frac
    }))
}

/// Finalized corpus statistics, row-major by layer then position.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMatrix {
    pub layers: usize,
    pub positions: usize,
    pub bins: usize,
    pub max_entropy: f64,
    /// Mean entropy in bits per cell.
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
    /// `None` where no record had a known next token.
    pub error_rate: Vec<Option<f64>>,
    pub count: Vec<u64>,
    pub errors: Vec<u64>,
    pub error_denominator: Vec<u64>,
    /// Per-cell histogram densities (integrating to one), `bins` per cell.
    pub density: Vec<f64>,
}

/// A row or column of an [`EntropyMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// Positions (1-based) for a horizontal view, layers for a vertical one.
    pub index: Vec<usize>,
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
    pub error_rate: Vec<Option<f64>>,
}

impl EntropyMatrix {
    fn offset(&self, layer: usize, position: usize) -> usize {
        layer * self.positions + position - 1
    }

    pub fn mean_at(&self, layer: usize, position: usize) -> f64 {
        self.mean[self.offset(layer, position)]
    }

    pub fn error_rate_at(&self, layer: usize, position: usize) -> Option<f64> {
        self.error_rate[self.offset(layer, position)]
    }

    pub fn density_at(&self, layer: usize, position: usize) -> &[f64] {
        let o = self.offset(layer, position) * self.bins;
        &self.density[o..o + self.bins]
    }

    fn series(&self, index: Vec<usize>, cells: impl Iterator<Item = usize>) -> Series {
        let cells: Vec<usize> = cells.collect();
        Series {
            index,
            mean: cells.iter().map(|&c| self.mean[c]).collect(),
            stdev: cells.iter().map(|&c| self.stdev[c]).collect(),
            error_rate: cells.iter().map(|&c| self.error_rate[c]).collect(),
        }
    }

    /// Row `layer` over positions `1..=N`.
    pub fn horizontal_view(&self, layer: usize) -> Result<Series, AnalysisError> {
        if layer >= self.layers {
            return Err(AnalysisError::LayerRange {
                layer,
                max: self.layers - 1,
            });
        }
        let start = layer * self.positions;
        Ok(self.series((1..=self.positions).collect(), start..start + self.positions))
    }

    /// Column `position` (1-based) over layers `0..=L`.
    pub fn vertical_view(&self, position: usize) -> Result<Series, AnalysisError> {
        if position == 0 || position > self.positions {
            return Err(AnalysisError::PositionRange {
                position,
                max: self.positions,
            });
        }
        let p = self.positions;
        Ok(self.series((0..self.layers).collect(), (0..self.layers).map(|j| j * p + position - 1)))
    }
}

/// Entropy distribution of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionView {
    pub layer: usize,
    pub position: usize,
    pub count: u64,
    pub mean: f64,
    pub max_entropy: f64,
    pub bin_width: f64,
    /// Fraction of samples per bin; sums to one.
    pub probabilities: Vec<f64>,
    /// Values at [`QUANTILE_LEVELS`].
    pub quantiles: [f64; 5],
}

impl DistributionView {
    pub fn density(&self) -> impl Iterator<Item = f64> + '_ {
        self.probabilities.iter().map(move |p| p / self.bin_width)
    }
}
