//! Entropy sources behind the sampling loop.
//!
//! Three interchangeable uniform-draw suppliers: an honest seeded PRNG, an
//! attacker-controlled PRNG of the same construction (what a compromised
//! randomness library looks like from the sampler's side), and an
//! OS-entropy source standing in for a hardware QRNG. The QRNG variant
//! accepts no seed and never falls back to a deterministic path; if the OS
//! facility fails, the caller gets an error, not silently weaker draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{word_to_uniform, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Honest,
    Hijacked,
    Qrng,
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SourceKind::Honest => "honest",
            SourceKind::Hijacked => "hijacked",
            SourceKind::Qrng => "qrng",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub enum EntropySource {
    Honest(SplitMix64),
    Hijacked(SplitMix64),
    Qrng,
}

impl EntropySource {
    pub fn honest(seed: u64) -> Self {
        EntropySource::Honest(SplitMix64::new(seed))
    }

    pub fn hijacked(seed: u64) -> Self {
        EntropySource::Hijacked(SplitMix64::new(seed))
    }

    /// OS cryptographic entropy. Deliberately unseedable.
    pub fn qrng() -> Self {
        EntropySource::Qrng
    }

    #[inline]
    pub fn kind(&self) -> SourceKind {
        match self {
            EntropySource::Honest(_) => SourceKind::Honest,
            EntropySource::Hijacked(_) => SourceKind::Hijacked,
            EntropySource::Qrng => SourceKind::Qrng,
        }
    }

    /// One uniform draw in [0, 1).
    pub fn next_uniform(&mut self) -> Result<f64> {
        match self {
            EntropySource::Honest(g) | EntropySource::Hijacked(g) => Ok(g.next_f64()),
            EntropySource::Qrng => {
                let mut buf = [0u8; 8];
                getrandom::fill(&mut buf)
                    .map_err(|e| Error::EntropyFailure(e.to_string()))?;
                Ok(word_to_uniform(u64::from_le_bytes(buf)))
            }
        }
    }
}

/// Checks that `probs` is a usable distribution: finite, non-negative
/// entries summing to 1 within 1e-9.
pub fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("no entries".into()));
    }
    let mut sum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Inverse-CDF lookup: the smallest index whose running sum exceeds `u`.
/// Accumulation order is fixed (ascending index); `steer_draw` relies on
/// the same order when it plants a uniform.
pub fn inverse_cdf_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding in the running sum can leave u just past the final
    // cumulative value; the draw then belongs to the last supported token.
    last_positive
}

/// Draws one token by inverse CDF, consuming exactly one uniform.
pub fn multinomial_draw(source: &mut EntropySource, probs: &[f64]) -> Result<usize> {
    validate_distribution(probs)?;
    let u = source.next_uniform()?;
    Ok(inverse_cdf_index(probs, u))
}

/// The uniform an attacker would plant to force the draw into `targets`:
/// the midpoint of the CDF interval of the highest-mass target (ties to
/// the smallest token id). Absent when no target carries positive mass.
pub fn steer_draw(probs: &[f64], targets: &[usize]) -> Result<Option<f64>> {
    validate_distribution(probs)?;
    let mut best: Option<(f64, usize)> = None;
    for &t in targets {
        if t >= probs.len() {
            continue;
        }
        let mass = probs[t];
        if mass > 0.0 && best.map_or(true, |(m, id)| mass > m || (mass == m && t < id)) {
            best = Some((mass, t));
        }
    }
    let Some((_, chosen)) = best else {
        return Ok(None);
    };
    let lo: f64 = probs[..chosen].iter().sum();
    Ok(Some(lo + probs[chosen] / 2.0))
}
