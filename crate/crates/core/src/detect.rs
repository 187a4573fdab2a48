//! Content-side stealth detectors.
//!
//! Six statistics compare a candidate sequence against a reference corpus
//! of honest generations: a two-sample KS distance on model ranks, a KL
//! divergence on binned ranks, three standardized deviations (perplexity,
//! mean entropy, mean log-likelihood), and a 4-gram repetition score. Each
//! has a fixed trigger threshold; the suite reports which fired.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::SequenceRecord;
use crate::stats::{mean, sample_std};
use crate::watermark::z_from_counts;

pub const MIN_REFERENCE_SEQUENCES: usize = 8;
pub const MIN_REFERENCE_TOKENS: usize = 100;
pub const NGRAM_ORDER: usize = 4;

pub const DETECTOR_NAMES: [&str; 6] = [
    "rank_ks",
    "kl_div",
    "perplexity_f",
    "entropy_f",
    "repetition",
    "loglik_f",
];

/// Trigger thresholds, index-aligned with `DETECTOR_NAMES`.
pub const DETECTOR_THRESHOLDS: [f64; 6] = [0.15, 0.774, 2.0, 2.0, 0.30, 2.0];

/// Reference-corpus statistics detectors compare against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub vocab_size: usize,
    pub corpus_size: usize,
    pub perplexity_mean: f64,
    pub perplexity_std: f64,
    pub entropy_mean: f64,
    pub entropy_std: f64,
    pub loglik_mean: f64,
    pub loglik_std: f64,
    pub repetition_mean: f64,
    pub z_mean: f64,
    pub z_std: f64,
    sorted_ranks: Vec<u32>,
    bin_counts: Vec<u64>,
}

fn rank_bin(rank: usize) -> usize {
    debug_assert!(rank >= 1);
    (usize::BITS - 1 - rank.leading_zeros()) as usize
}

fn bin_count_for(vocab_size: usize) -> usize {
    rank_bin(vocab_size) + 1
}

fn bin_ranks(ranks: &[usize], n_bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_bins];
    for &r in ranks {
        counts[rank_bin(r).min(n_bins - 1)] += 1;
    }
    counts
}

/// 4-gram repetition score: 1 minus the distinct fraction of overlapping
/// 4-grams. 0 means every window is unique.
pub fn repetition_score(tokens: &[usize]) -> Result<f64> {
    if tokens.len() < NGRAM_ORDER {
        return Err(Error::SequenceTooShort(format!(
            "{} tokens cannot form a {NGRAM_ORDER}-gram",
            tokens.len()
        )));
    }
    let total = tokens.len() - NGRAM_ORDER + 1;
    let distinct: HashSet<&[usize]> = tokens.windows(NGRAM_ORDER).collect();
    Ok(1.0 - distinct.len() as f64 / total as f64)
}

/// Builds reference statistics from honest generations. Requires at least
/// `MIN_REFERENCE_SEQUENCES` records of `MIN_REFERENCE_TOKENS` tokens each.
pub fn build_reference(records: &[SequenceRecord], vocab_size: usize) -> Result<ReferenceStats> {
    if records.len() < MIN_REFERENCE_SEQUENCES {
        return Err(Error::InsufficientReference(format!(
            "{} sequences, need {MIN_REFERENCE_SEQUENCES}",
            records.len()
        )));
    }
    let mut ppl = Vec::with_capacity(records.len());
    let mut ent = Vec::with_capacity(records.len());
    let mut ll = Vec::with_capacity(records.len());
    let mut rep = Vec::with_capacity(records.len());
    let mut zs = Vec::with_capacity(records.len());
    let mut pooled: Vec<u32> = Vec::new();
    for rec in records {
        if rec.len() < MIN_REFERENCE_TOKENS {
            return Err(Error::SequenceTooShort(format!(
                "reference sequence of {} tokens, need {MIN_REFERENCE_TOKENS}",
                rec.len()
            )));
        }
        ppl.push(rec.perplexity());
        ent.push(rec.mean_entropy());
        ll.push(rec.mean_loglik());
        rep.push(repetition_score(&rec.tokens)?);
        if let (Some(count), Some(w)) = (rec.green_count(), &rec.config.watermark) {
            zs.push(z_from_counts(count, rec.len(), w.gamma)?);
        }
        pooled.extend(rec.ranks.iter().map(|&r| r as u32));
    }
    pooled.sort_unstable();
    let n_bins = bin_count_for(vocab_size);
    let ranks_usize: Vec<usize> = pooled.iter().map(|&r| r as usize).collect();
    let bin_counts = bin_ranks(&ranks_usize, n_bins);

    let perplexity_std = sample_std(&ppl);
    let entropy_std = sample_std(&ent);
    let loglik_std = sample_std(&ll);
    if perplexity_std == 0.0 || entropy_std == 0.0 || loglik_std == 0.0 {
        return Err(Error::ZeroStd("reference scalar statistic"));
    }
    Ok(ReferenceStats {
        vocab_size,
        corpus_size: records.len(),
        perplexity_mean: mean(&ppl),
        perplexity_std,
        entropy_mean: mean(&ent),
        entropy_std,
        loglik_mean: mean(&ll),
        loglik_std,
        repetition_mean: mean(&rep),
        z_mean: if zs.is_empty() { f64::NAN } else { mean(&zs) },
        z_std: sample_std(&zs),
        sorted_ranks: pooled,
        bin_counts,
    })
}

/// Two-sample Kolmogorov-Smirnov distance between the candidate's rank
/// sample and the pooled reference ranks.
pub fn rank_ks(candidate: &[usize], reference: &ReferenceStats) -> Result<f64> {
    if candidate.is_empty() || reference.sorted_ranks.is_empty() {
        return Err(Error::EmptyRankSamples);
    }
    let mut cand: Vec<u32> = candidate.iter().map(|&r| r as u32).collect();
    cand.sort_unstable();
    let refs = &reference.sorted_ranks;
    let (n, m) = (cand.len() as f64, refs.len() as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < cand.len() && j < refs.len() {
        let v = cand[i].min(refs[j]);
        while i < cand.len() && cand[i] == v {
            i += 1;
        }
        while j < refs.len() && refs[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d.max(1.0 - (i as f64 / n).min(j as f64 / m)).min(1.0))
}

/// KL divergence (nats) of the candidate's binned rank distribution from
/// the reference's. Bins double in width (rank 1, 2-3, 4-7, ...) and both
/// histograms get add-one smoothing so the ratio is always defined.
pub fn kl_div(candidate: &[usize], reference: &ReferenceStats) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::EmptyRankSamples);
    }
    let n_bins = bin_count_for(reference.vocab_size);
    let cand = bin_ranks(candidate, n_bins);
    let cand_total: f64 = candidate.len() as f64 + n_bins as f64;
    let ref_total: f64 = reference.sorted_ranks.len() as f64 + n_bins as f64;
    let mut kl = 0.0;
    for (c, r) in cand.iter().zip(&reference.bin_counts) {
        let p = (c + 1) as f64 / cand_total;
        let q = (r + 1) as f64 / ref_total;
        kl += p * (p / q).ln();
    }
    Ok(kl)
}

/// Standardized absolute deviation of a scalar from its reference mean.
pub fn f_score(value: f64, ref_mean: f64, ref_std: f64) -> Result<f64> {
    if !(ref_std > 0.0) {
        return Err(Error::ZeroStd("reference scalar statistic"));
    }
    Ok((value - ref_mean).abs() / ref_std)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorReport {
    pub rank_ks: f64,
    pub kl_div: f64,
    pub perplexity_f: f64,
    pub entropy_f: f64,
    pub repetition: f64,
    pub loglik_f: f64,
    pub triggered: [bool; 6],
    pub trigger_count: usize,
    /// Green-count z of the candidate, when it carries green flags.
    pub z: Option<f64>,
    /// Candidate z over the supplied baseline z, when both exist.
    pub survival: Option<f64>,
}

impl DetectorReport {
    pub fn stats(&self) -> [f64; 6] {
        [
            self.rank_ks,
            self.kl_div,
            self.perplexity_f,
            self.entropy_f,
            self.repetition,
            self.loglik_f,
        ]
    }

    pub fn clean(&self) -> bool {
        self.trigger_count == 0
    }
}

/// Runs all six detectors on a candidate record. `baseline_z` feeds the
/// survival ratio; pass `None` when no paired honest run exists.
pub fn run_suite(
    record: &SequenceRecord,
    reference: &ReferenceStats,
    baseline_z: Option<f64>,
) -> Result<DetectorReport> {
    if record.is_empty() {
        return Err(Error::EmptySequence);
    }
    let stats = [
        rank_ks(&record.ranks, reference)?,
        kl_div(&record.ranks, reference)?,
        f_score(record.perplexity(), reference.perplexity_mean, reference.perplexity_std)?,
        f_score(record.mean_entropy(), reference.entropy_mean, reference.entropy_std)?,
        repetition_score(&record.tokens)?,
        f_score(record.mean_loglik(), reference.loglik_mean, reference.loglik_std)?,
    ];
    let mut triggered = [false; 6];
    for (i, (&s, &t)) in stats.iter().zip(&DETECTOR_THRESHOLDS).enumerate() {
        triggered[i] = s > t;
    }
    let z = match (record.green_count(), &record.config.watermark) {
        (Some(count), Some(w)) => Some(z_from_counts(count, record.len(), w.gamma)?),
        _ => None,
    };
    let survival = match (z, baseline_z) {
        (Some(zc), Some(zb)) => Some(crate::watermark::survival(zc, zb)?),
        _ => None,
    };
    Ok(DetectorReport {
        rank_ks: stats[0],
        kl_div: stats[1],
        perplexity_f: stats[2],
        entropy_f: stats[3],
        repetition: stats[4],
        loglik_f: stats[5],
        triggered,
        trigger_count: triggered.iter().filter(|&&x| x).count(),
        z,
        survival,
    })
}
