//! Built-in property checks run by `lensprobe selftest`.

use lensprobe_core::analysis::EntropyAggregate;
use lensprobe_core::lens::{self, LensMode};
use lensprobe_core::numerics::{self, entropy_bits_from_logits};
use lensprobe_core::{model, Checkpoint, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::toy_config;

/// Deliberate defects for checking that the suites notice them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Softmax without subtracting the maximum logit.
    UnstableSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, result: Result<String, String>) -> SuiteOutcome {
    match result {
        Ok(detail) => SuiteOutcome {
            name,
            passed: true,
            detail,
        },
        Err(detail) => SuiteOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

fn reference_softmax(logits: &[f64], fault: Fault) -> Vec<f64> {
    let shift = match fault {
        Fault::None => logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Fault::UnstableSoftmax => 0.0,
    };
    let exps: Vec<f64> = logits.iter().map(|&z| (z - shift).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn reference_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.log2()).sum()
}

fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<TokenId> {
    (0..n).map(|_| TokenId(rng.gen_range(0..vocab as u32))).collect()
}

/// Fused entropy against softmax-then-sum, including logits far from zero.
fn entropy_oracle(fault: Fault) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for dim in [2usize, 16, 1024] {
        for trial in 0..50 {
            let offset = if trial % 5 == 0 { 800.0 } else { 0.0 };
            let scale = [0.1, 1.0, 10.0][trial % 3];
            let logits: Vec<f64> = (0..dim).map(|_| offset + scale * rng.gen_range(-4.0..4.0)).collect();
            let fused = entropy_bits_from_logits(&logits).map_err(|e| e.to_string())?;
            let naive = reference_entropy(&reference_softmax(&logits, fault));
            if !naive.is_finite() || (fused - naive).abs() > 1e-6 {
                return Err(format!("dim {dim} trial {trial}: fused {fused} vs reference {naive}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} logit vectors agree within 1e-6 bits"))
}

fn softmax_stability(fault: Fault) -> Result<String, String> {
    for logits in [[1000.0, 0.0], [-1000.0, -1001.0]] {
        let p = reference_softmax(&logits, fault);
        let library = numerics::softmax(&logits).map_err(|e| e.to_string())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(format!("softmax({logits:?}) = {p:?}"));
        }
        if p.iter().zip(library.as_slice()).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(format!("softmax({logits:?}) disagrees with the library"));
        }
    }
    Ok("extreme logits stay finite".into())
}

fn causality(ckpt: &Checkpoint) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = ckpt.config.vocab_size;
    let trials = 20;
    for trial in 0..trials {
        let n = rng.gen_range(2..=16);
        let tokens = random_tokens(&mut rng, n, m);
        let cut = rng.gen_range(1..n);
        let mut perturbed = tokens.clone();
        for t in &mut perturbed[cut..] {
            *t = TokenId(rng.gen_range(0..m as u32));
        }
        let a = model::forward_with_taps(ckpt, &tokens).map_err(|e| e.to_string())?;
        let b = model::forward_with_taps(ckpt, &perturbed).map_err(|e| e.to_string())?;
        for j in 0..a.layers() {
            for i in 0..cut {
                let same = a.tap(j, i).iter().zip(b.tap(j, i)).all(|(x, y)| x.to_bits() == y.to_bits());
                if !same {
                    return Err(format!("trial {trial}: tap (layer {j}, position {}) changed", i + 1));
                }
            }
        }
    }
    Ok(format!("{trials} suffix perturbations left earlier taps unchanged"))
}

fn entropy_bounds(ckpt: &Checkpoint) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bound = (ckpt.config.vocab_size as f64).log2() + 1e-9;
    let mut count = 0;
    for mode in [LensMode::Raw, LensMode::FinalNorm] {
        for _ in 0..25 {
            let tokens = random_tokens(&mut rng, 12, ckpt.config.vocab_size);
            let grid = model::forward_with_taps(ckpt, &tokens).map_err(|e| e.to_string())?;
            let records = lens::lens_sequence(ckpt, &grid, &tokens, None, mode).map_err(|e| e.to_string())?;
            for r in &records {
                if !(0.0..=bound).contains(&r.entropy_bits) {
                    return Err(format!("layer {} position {}: {} bits", r.layer, r.position, r.entropy_bits));
                }
            }
            count += records.len();
        }
    }
    Ok(format!("{count} lens records within [0, log2 M]"))
}

fn merge(ckpt: &Checkpoint) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ckpt.config;
    let n = 10;
    let new = || EntropyAggregate::new(cfg.layers + 1, n, 32, cfg.vocab_size).map_err(|e| e.to_string());
    let (mut all, mut left, mut right) = (new()?, new()?, new()?);
    for k in 0..30 {
        let tokens = random_tokens(&mut rng, n, cfg.vocab_size);
        let grid = model::forward_with_taps(ckpt, &tokens).map_err(|e| e.to_string())?;
        let records =
            lens::lens_sequence(ckpt, &grid, &tokens, None, LensMode::FinalNorm).map_err(|e| e.to_string())?;
        all.accumulate(&records).map_err(|e| e.to_string())?;
        let half = if k % 3 == 0 { &mut left } else { &mut right };
        half.accumulate(&records).map_err(|e| e.to_string())?;
    }
    let merged = left.merge(&right).map_err(|e| e.to_string())?;
    let a = all.finalize().map_err(|e| e.to_string())?;
    let b = merged.finalize().map_err(|e| e.to_string())?;
    if a.count != b.count || a.errors != b.errors {
        return Err("merged counts differ".into());
    }
    let worst = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(format!("merged means differ by {worst:e} bits"));
    }
    Ok(format!("merged means within {worst:e} bits"))
}

fn determinism(ckpt: &Checkpoint) -> Result<String, String> {
    let again = Checkpoint::toy(ckpt.config, crate::TOY_SEED).map_err(|e| e.to_string())?;
    let bytes = |c: &Checkpoint| c.to_archive().map(|w| w.to_bytes()).map_err(|e| e.to_string());
    if bytes(ckpt)? != bytes(&again)? {
        return Err("toy checkpoint bytes differ between generations".into());
    }
    let tokens = random_tokens(&mut ChaCha8Rng::seed_from_u64(5), 16, ckpt.config.vocab_size);
    let a = model::forward_with_taps(ckpt, &tokens).map_err(|e| e.to_string())?;
    let b = model::forward_with_taps(&again, &tokens).map_err(|e| e.to_string())?;
    if a.as_slice().iter().zip(b.as_slice()).any(|(x, y)| x.to_bits() != y.to_bits()) {
        return Err("forward pass is not bitwise repeatable".into());
    }
    Ok("checkpoint generation and forward pass are bitwise repeatable".into())
}

pub fn run(fault: Fault) -> Vec<SuiteOutcome> {
    let ckpt = match Checkpoint::toy(toy_config(), crate::TOY_SEED) {
        Ok(c) => c,
        Err(e) => return vec![outcome("toy checkpoint", Err(e.to_string()))],
    };
    vec![
        outcome("softmax stability", softmax_stability(fault)),
        outcome("entropy oracle", entropy_oracle(fault)),
        outcome("entropy bounds", entropy_bounds(&ckpt)),
        outcome("causality", causality(&ckpt)),
        outcome("merge", merge(&ckpt)),
        outcome("determinism", determinism(&ckpt)),
    ]
}
