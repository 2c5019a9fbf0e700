//! Scalar and vector kernels shared by the model and the lens.
//!
//! Tensor math runs in `f32`. Softmax, entropy and layer-norm statistics
//! accumulate in `f64`. Every reduction combines terms in a fixed order so
//! repeated runs are bit-identical.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

/// Maximum allowed deviation of a probability vector's sum from one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },
    #[error("shape mismatch: {left_rows}x{left_cols} times {right_rows}x{right_cols}")]
    Shape {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
}

/// Unnormalized scores over the vocabulary. All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, NumericsError> {
        check_finite(&values)?;
        if values.is_empty() {
            return Err(NumericsError::InvalidInput("empty logit vector"));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, NumericsError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn softmax(&self) -> ProbVector {
        ProbVector(softmax_unchecked(&self.0))
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits_unchecked(&self.0)
    }
}

/// A probability distribution over the vocabulary.
///
/// Entries are non-negative and sum to one within [`PROB_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, NumericsError> {
        validate_probabilities(&values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(NumericsError::InvalidInput("probabilities do not sum to one"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        // non-empty by construction
        argmax(&self.0).unwrap_or(0)
    }

    pub fn entropy_bits(&self) -> f64 {
        naive_entropy_bits(&self.0)
    }
}

fn check_finite<T: Copy + Into<f64>>(values: &[T]) -> Result<(), NumericsError> {
    match values.iter().position(|&v| !v.into().is_finite()) {
        Some(index) => Err(NumericsError::NonFinite { index }),
        None => Ok(()),
    }
}

fn validate_probabilities(values: &[f64]) -> Result<(), NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::InvalidInput("empty probability vector"));
    }
    check_finite(values)?;
    if let Some(index) = values.iter().position(|&v| v < 0.0) {
        return Err(NumericsError::NegativeProbability {
            index,
            value: values[index],
        });
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index. `None` on empty
/// input. NaN entries never win.
pub fn argmax<T: Copy + PartialOrd>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v.partial_cmp(&b) != Some(core::cmp::Ordering::Greater) => {}
            _ if v.partial_cmp(&v).is_none() => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Max-subtracted softmax.
pub fn softmax<T: Copy + Into<f64>>(logits: &[T]) -> Result<ProbVector, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::InvalidInput("empty logit vector"));
    }
    check_finite(logits)?;
    let widened: Vec<f64> = logits.iter().map(|&v| v.into()).collect();
    Ok(ProbVector(softmax_unchecked(&widened)))
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = max_of(logits);
    let mut out: Vec<f64> = logits.iter().map(|&x| libm::exp(x - max)).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Shannon entropy in bits, `sum p log2(1/p)` with `0 log 0 = 0`.
///
/// This is the direct definition and serves as the oracle for
/// [`entropy_bits_from_logits`].
pub fn entropy_bits(p: &[f64]) -> Result<f64, NumericsError> {
    validate_probabilities(p)?;
    Ok(naive_entropy_bits(p))
}

fn naive_entropy_bits(p: &[f64]) -> f64 {
    let nats: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * libm::log(v))
        .sum();
    nats / LN_2
}

/// Entropy in bits of `softmax(logits)` without materializing `p log p`.
///
/// With `z = logits - max`, `H = ln(sum e^z) - sum(e^z z) / sum(e^z)`,
/// converted to bits. Terms whose probability underflows contribute
/// nothing either way, so large vocabularies stay accurate.
pub fn entropy_bits_from_logits<T: Copy + Into<f64>>(logits: &[T]) -> Result<f64, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::InvalidInput("empty logit vector"));
    }
    check_finite(logits)?;
    let max = logits
        .iter()
        .map(|&v| v.into())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut mass = 0.0f64;
    let mut weighted = 0.0f64;
    for &v in logits {
        let z = v.into() - max;
        let e = libm::exp(z);
        mass += e;
        weighted += e * z;
    }
    Ok(((libm::log(mass) - weighted / mass) / LN_2).max(0.0))
}

fn entropy_bits_unchecked(logits: &[f64]) -> f64 {
    entropy_bits_from_logits(logits).unwrap_or(0.0)
}

/// Layer normalization with population variance (divisor `D`).
pub fn layer_norm(x: &[f32], gain: &[f32], shift: &[f32], eps: f32) -> Result<Vec<f32>, NumericsError> {
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, gain, shift, eps, &mut out)?;
    Ok(out)
}

/// [`layer_norm`] writing into a caller-provided buffer.
pub fn layer_norm_into(
    x: &[f32],
    gain: &[f32],
    shift: &[f32],
    eps: f32,
    out: &mut [f32],
) -> Result<(), NumericsError> {
    let d = x.len();
    if d == 0 {
        return Err(NumericsError::InvalidInput("layer norm over empty vector"));
    }
    if gain.len() != d || shift.len() != d || out.len() != d {
        return Err(NumericsError::InvalidInput("layer norm parameter length mismatch"));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(NumericsError::InvalidInput("layer norm eps must be positive"));
    }
    check_finite(x)?;
    let n = d as f64;
    let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x
        .iter()
        .map(|&v| {
            let c = f64::from(v) - mean;
            c * c
        })
        .sum::<f64>()
        / n;
    let inv = 1.0 / libm::sqrt(var + f64::from(eps));
    for i in 0..d {
        let normed = (f64::from(x[i]) - mean) * inv;
        out[i] = (normed * f64::from(gain[i]) + f64::from(shift[i])) as f32;
    }
    Ok(())
}

/// Tanh-approximation GELU used by GPT-2.
pub fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + libm::tanhf(SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)))
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::InvalidInput("matrix data length does not match shape"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    if a.cols != b.rows {
        return Err(NumericsError::Shape {
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(&a.data, a.rows, a.cols, &b.data, b.cols, &mut out.data);
    Ok(out)
}

/// `out[m x n] = a[m x k] * b[k x n]`, accumulating in `k` order.
pub(crate) fn matmul_into(a: &[f32], m: usize, k: usize, b: &[f32], n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// Dot product over eight interleaved partial sums, combined in a fixed
/// order. Deterministic, and wide enough for the compiler to vectorize.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[0.0f64, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn softmax_odds_ratio() {
        let c = 2.5f64;
        let p = softmax(&[c, c + libm::log(3.0)]).unwrap();
        assert!(close(p.as_slice()[0], 0.25, 1e-12));
        assert!(close(p.as_slice()[1], 0.75, 1e-12));
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
        assert!(close(p.as_slice()[0], 1.0, 1e-12));
        assert!(p.as_slice()[1] < 1e-300 || p.as_slice()[1] == 0.0);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert_eq!(
            softmax(&[0.0f64, f64::NAN]).unwrap_err(),
            NumericsError::NonFinite { index: 1 }
        );
        assert!(softmax(&[f64::INFINITY]).is_err());
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_bits(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(close(entropy_bits(&[0.5, 0.25, 0.25]).unwrap(), 1.5, 1e-15));
        let m = 50257usize;
        let uniform = alloc::vec![1.0 / m as f64; m];
        // log2(50257) to 20 digits, computed with mpmath
        assert!(close(entropy_bits(&uniform).unwrap(), 15.617_036_934_287_742, 1e-9));
    }

    #[test]
    fn entropy_rejects_negative_entries() {
        assert!(matches!(
            entropy_bits(&[1.5, -0.5]),
            Err(NumericsError::NegativeProbability { index: 1, .. })
        ));
    }

    #[test]
    fn fused_entropy_examples() {
        assert!(close(entropy_bits_from_logits(&[0.0f64, 0.0]).unwrap(), 1.0, 1e-15));
        assert!(close(entropy_bits_from_logits(&[5.0f64; 4]).unwrap(), 2.0, 1e-15));
        assert!(entropy_bits_from_logits(&[1.0f32, f32::NAN]).is_err());
    }

    #[test]
    fn fused_entropy_matches_naive_on_seeded_16_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..16).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let naive = entropy_bits(softmax(&logits).unwrap().as_slice()).unwrap();
            let fused = entropy_bits_from_logits(&logits).unwrap();
            assert!(close(naive, fused, 1e-9), "{naive} vs {fused}");
        }
    }

    #[test]
    fn layer_norm_examples() {
        let out = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!(close(f64::from(out[0]), 0.999_995, 1e-6));
        assert!(close(f64::from(out[1]), -0.999_995, 1e-6));

        let shift = [0.3f32, -1.25, 7.0];
        let out = layer_norm(&[0.1, 0.1, 0.1], &[2.0, 3.0, 4.0], &shift, 1e-5).unwrap();
        assert_eq!(out, shift);

        let out = layer_norm(&[3.0, 1.0], &[2.0, 2.0], &[1.0, 1.0], f32::MIN_POSITIVE).unwrap();
        assert_eq!(out, [3.0, -1.0]);
    }

    #[test]
    fn layer_norm_rejects_bad_parameters() {
        assert!(layer_norm(&[], &[], &[], 1e-5).is_err());
        assert!(layer_norm(&[1.0], &[1.0], &[0.0], 0.0).is_err());
        assert!(layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).is_err());
        assert!(layer_norm(&[f32::NAN], &[1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0), 0.0);
        assert!(close(f64::from(gelu(20.0)), 20.0, 1e-5));
        // 0.841191990608276704..., evaluated with mpmath
        assert!(close(f64::from(gelu(1.0)), 0.841_191_990_608_276_7, 1e-6));
        assert!(close(f64::from(gelu(-20.0)), 0.0, 1e-5));
    }

    #[test]
    fn matmul_examples() {
        let b = Matrix::from_vec(3, 2, alloc::vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&Matrix::identity(3), &b).unwrap(), b);
        let z = Matrix::zeros(2, 4);
        assert_eq!(matmul(&b, &z).unwrap(), Matrix::zeros(3, 4));
        let a = Matrix::from_vec(2, 2, alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = Matrix::from_vec(2, 1, alloc::vec![5.0, 6.0]).unwrap();
        assert_eq!(matmul(&a, &c).unwrap().as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(
            matmul(&a, &a),
            Err(NumericsError::Shape { left_cols: 3, right_rows: 2, .. })
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax(&[0.25f32; 4]), Some(0));
        assert_eq!(argmax::<f32>(&[]), None);
        assert_eq!(argmax(&[f32::NAN, 1.0]), Some(1));
    }
}
