//! Keyed green-list watermarks over the synthetic model.
//!
//! Three schemes share one config:
//!
//! * `Kgw`: context-keyed green list, additive logit bias `delta`.
//! * `Unigram`: a single global green list derived from the key alone;
//!   same bias rule as `Kgw`.
//! * `DipMark`: permutation-based reweighting of the sampling
//!   distribution; no logit bias. The green set for detection is the tail
//!   of the keyed permutation.
//!
//! Detection is the classic one-proportion z-test on the green-token count.
//! All per-step keying flows through the SplitMix64 finalizer, so a
//! detector holding the key can replay every partition from the published
//! tokens alone.

use serde::{Deserialize, Serialize};

use crate::entropy::validate_distribution;
use crate::error::{Error, Result};
use crate::rng::{keyed_mix, mix64, SplitMix64};

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 2.0;
pub const DEFAULT_CONTEXT_WIDTH: usize = 1;
pub const DEFAULT_ALPHA: f64 = 0.45;

const SEED_TAG: u64 = 0x7761_7465_726D_6172; // step-seed domain separator

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkScheme {
    Kgw,
    Unigram,
    DipMark,
}

impl std::fmt::Display for WatermarkScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WatermarkScheme::Kgw => "kgw",
            WatermarkScheme::Unigram => "unigram",
            WatermarkScheme::DipMark => "dipmark",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub scheme: WatermarkScheme,
    /// Green-list fraction, in (0, 1).
    pub gamma: f64,
    /// Logit bias for green tokens (`Kgw`/`Unigram`), >= 0.
    pub delta: f64,
    /// Detection key.
    pub key: u64,
    /// How many trailing tokens seed each step (`Unigram` ignores this).
    pub context_width: usize,
    /// DipMark reweight strength, in (0, 0.5]; 0.5 is the identity.
    pub alpha: f64,
}

impl WatermarkConfig {
    pub fn new(scheme: WatermarkScheme, key: u64) -> Self {
        WatermarkConfig {
            scheme,
            gamma: DEFAULT_GAMMA,
            delta: DEFAULT_DELTA,
            key,
            context_width: DEFAULT_CONTEXT_WIDTH,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidConfig(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.context_width < 1 {
            return Err(Error::InvalidConfig("context_width must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 0.5], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One step's green/red split of the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreenPartition {
    pub step_seed: u64,
    membership: Vec<bool>,
    green_count: usize,
}

impl GreenPartition {
    #[inline]
    pub fn is_green(&self, token: usize) -> bool {
        self.membership[token]
    }

    #[inline]
    pub fn vocab_size(&self) -> usize {
        self.membership.len()
    }

    #[inline]
    pub fn green_count(&self) -> usize {
        self.green_count
    }

    pub fn green_fraction(&self) -> f64 {
        self.green_count as f64 / self.membership.len() as f64
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }
}

/// Per-step seed: the key folded with the trailing `context_width` token
/// ids. `Unigram` is a pure function of the key.
pub fn step_seed(config: &WatermarkConfig, context: &[usize]) -> u64 {
    let mut s = keyed_mix(config.key, SEED_TAG);
    if config.scheme == WatermarkScheme::Unigram {
        return s;
    }
    let suffix = &context[context.len().saturating_sub(config.context_width)..];
    for &tok in suffix {
        s = keyed_mix(s, tok as u64);
    }
    s
}

#[inline]
fn gamma_threshold(gamma: f64) -> u64 {
    // 2^64 * gamma, saturating at the top; the cast saturates by language
    // definition.
    (gamma * 18_446_744_073_709_551_616.0) as u64
}

#[inline]
fn hash_token(config: &WatermarkConfig, seed: u64, token: usize) -> u64 {
    mix64(seed ^ mix64(config.key) ^ mix64(token as u64))
}

/// The keyed permutation DipMark uses at one step.
pub fn dipmark_permutation(step_seed: u64, vocab_size: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..vocab_size).collect();
    let mut g = SplitMix64::new(step_seed);
    for i in (1..vocab_size).rev() {
        let j = g.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Derives the step's green partition. Threshold test for `Kgw`/`Unigram`;
/// permutation tail of size ceil(gamma * |V|) for `DipMark`.
pub fn green_list(config: &WatermarkConfig, step_seed: u64, vocab_size: usize) -> GreenPartition {
    let membership = match config.scheme {
        WatermarkScheme::Kgw | WatermarkScheme::Unigram => {
            let threshold = gamma_threshold(config.gamma);
            (0..vocab_size)
                .map(|v| hash_token(config, step_seed, v) < threshold)
                .collect::<Vec<bool>>()
        }
        WatermarkScheme::DipMark => {
            let perm = dipmark_permutation(step_seed, vocab_size);
            let tail = (config.gamma * vocab_size as f64).ceil() as usize;
            let mut m = vec![false; vocab_size];
            for &tok in &perm[vocab_size - tail.min(vocab_size)..] {
                m[tok] = true;
            }
            m
        }
    };
    let green_count = membership.iter().filter(|&&g| g).count();
    GreenPartition { step_seed, membership, green_count }
}

/// Membership test for a single token, replaying the same derivation as
/// `green_list` without materializing the whole vector.
pub fn is_green_token(config: &WatermarkConfig, step_seed: u64, vocab_size: usize, token: usize) -> bool {
    match config.scheme {
        WatermarkScheme::Kgw | WatermarkScheme::Unigram => {
            hash_token(config, step_seed, token) < gamma_threshold(config.gamma)
        }
        WatermarkScheme::DipMark => {
            let perm = dipmark_permutation(step_seed, vocab_size);
            let tail = (config.gamma * vocab_size as f64).ceil() as usize;
            let pos = perm.iter().position(|&t| t == token).unwrap();
            pos >= vocab_size - tail.min(vocab_size)
        }
    }
}

/// Logit-space bias: adds `delta` to green entries for `Kgw`/`Unigram`,
/// leaves `DipMark` logits untouched (its action happens after softmax).
pub fn apply_bias(config: &WatermarkConfig, logits: &[f64], partition: &GreenPartition) -> Result<Vec<f64>> {
    if logits.len() != partition.vocab_size() {
        return Err(Error::LengthMismatch(format!(
            "{} logits against a partition of {}",
            logits.len(),
            partition.vocab_size()
        )));
    }
    match config.scheme {
        WatermarkScheme::DipMark => Ok(logits.to_vec()),
        WatermarkScheme::Kgw | WatermarkScheme::Unigram => Ok(logits
            .iter()
            .enumerate()
            .map(|(v, &l)| if partition.is_green(v) { l + config.delta } else { l })
            .collect()),
    }
}

/// The DipMark hinge reweight for a fixed permutation. Mass at permuted
/// CDF position s is reweighted by 1_{s > 0.5-alpha} + 1_{s > 0.5+alpha},
/// so alpha = 0.5 reweights nothing and small alpha empties the head of
/// the permutation into its tail. Averaged over all permutations the input
/// distribution is recovered exactly.
pub fn dipmark_reweight_with_permutation(probs: &[f64], perm: &[usize], alpha: f64) -> Result<Vec<f64>> {
    validate_distribution(probs)?;
    if perm.len() != probs.len() {
        return Err(Error::LengthMismatch(format!(
            "permutation of {} over {} probabilities",
            perm.len(),
            probs.len()
        )));
    }
    if alpha == 0.5 {
        return Ok(probs.to_vec());
    }
    let lo = 0.5 - alpha;
    let hi = 0.5 + alpha;
    let hinge = |f: f64| (f - lo).max(0.0) + (f - hi).max(0.0);
    let mut out = vec![0.0; probs.len()];
    let mut cum = 0.0;
    let mut prev = hinge(0.0);
    for &tok in perm {
        cum += probs[tok];
        let cur = hinge(cum);
        out[tok] = cur - prev;
        prev = cur;
    }
    Ok(out)
}

/// DipMark reweighting with the permutation drawn from the step seed.
pub fn reweight_dipmark(config: &WatermarkConfig, probs: &[f64], step_seed: u64) -> Result<Vec<f64>> {
    let perm = dipmark_permutation(step_seed, probs.len());
    dipmark_reweight_with_permutation(probs, &perm, config.alpha)
}

/// One-proportion z-test on the green count.
pub fn z_from_counts(green_count: usize, n: usize, gamma: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let n = n as f64;
    Ok((green_count as f64 - gamma * n) / (n * gamma * (1.0 - gamma)).sqrt())
}

/// Ratio of attacked to baseline z. Undefined when the baseline carries no
/// positive watermark signal.
pub fn survival(z_attack: f64, z_baseline: f64) -> Result<f64> {
    if z_baseline <= 0.0 {
        return Err(Error::UndefinedSurvival);
    }
    Ok(z_attack / z_baseline)
}

/// Detector-side replay: green flag of every published token, derived only
/// from the key and the token stream.
pub fn replay_green_flags(config: &WatermarkConfig, tokens: &[usize], vocab_size: usize) -> Vec<bool> {
    tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            let seed = step_seed(config, &tokens[..t]);
            is_green_token(config, seed, vocab_size, tok)
        })
        .collect()
}

/// Replayed z-score of a published sequence under the keyed partition.
pub fn replay_z(config: &WatermarkConfig, tokens: &[usize], vocab_size: usize) -> Result<f64> {
    let flags = replay_green_flags(config, tokens, vocab_size);
    z_from_counts(flags.iter().filter(|&&g| g).count(), flags.len(), config.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(scheme: WatermarkScheme) -> WatermarkConfig {
        WatermarkConfig::new(scheme, 0xABCD_EF01_2345_6789)
    }

    #[test]
    fn green_fraction_tracks_gamma() {
        let c = cfg(WatermarkScheme::Kgw);
        let p = green_list(&c, step_seed(&c, &[1, 2, 3]), 512);
        let sigma = (0.5f64 * 0.5 / 512.0).sqrt();
        assert!((p.green_fraction() - 0.5).abs() < 4.0 * sigma, "{}", p.green_fraction());
    }

    #[test]
    fn tiny_gamma_yields_empty_green_list() {
        let mut c = cfg(WatermarkScheme::Kgw);
        c.gamma = 2.0f64.powi(-65);
        let p = green_list(&c, 12345, 64);
        assert_eq!(p.green_count(), 0);
    }

    #[test]
    fn unigram_ignores_context() {
        let c = cfg(WatermarkScheme::Unigram);
        assert_eq!(step_seed(&c, &[]), step_seed(&c, &[9, 8, 7]));
    }

    #[test]
    fn kgw_seed_depends_only_on_trailing_window() {
        let c = cfg(WatermarkScheme::Kgw); // context_width = 1
        assert_eq!(step_seed(&c, &[1, 2, 3]), step_seed(&c, &[9, 9, 3]));
        assert_ne!(step_seed(&c, &[1, 2, 3]), step_seed(&c, &[1, 2, 4]));
    }

    #[test]
    fn different_keys_different_partitions() {
        let a = cfg(WatermarkScheme::Kgw);
        let mut b = a;
        b.key ^= 1;
        let pa = green_list(&a, step_seed(&a, &[5]), 256);
        let pb = green_list(&b, step_seed(&b, &[5]), 256);
        assert_ne!(pa.membership(), pb.membership());
    }

    #[test]
    fn unigram_partition_still_keyed() {
        // the key must reach the per-token hash even though the step seed
        // is context-free
        let a = cfg(WatermarkScheme::Unigram);
        let mut b = a;
        b.key = b.key.wrapping_add(99);
        let pa = green_list(&a, step_seed(&a, &[]), 256);
        let pb = green_list(&b, step_seed(&b, &[]), 256);
        assert_ne!(pa.membership(), pb.membership());
    }

    #[test]
    fn bias_lands_exactly_on_green_entries() {
        let c = cfg(WatermarkScheme::Kgw);
        let p = green_list(&c, 777, 32);
        let logits = vec![0.25; 32];
        let biased = apply_bias(&c, &logits, &p).unwrap();
        for v in 0..32 {
            let expect = if p.is_green(v) { 0.25 + c.delta } else { 0.25 };
            assert_eq!(biased[v], expect);
        }
    }

    #[test]
    fn bias_length_mismatch_is_an_error() {
        let c = cfg(WatermarkScheme::Kgw);
        let p = green_list(&c, 777, 32);
        assert!(apply_bias(&c, &[0.0; 16], &p).is_err());
    }

    #[test]
    fn dipmark_logits_pass_through() {
        let c = cfg(WatermarkScheme::DipMark);
        let p = green_list(&c, 777, 32);
        let logits: Vec<f64> = (0..32).map(|i| i as f64 / 10.0).collect();
        assert_eq!(apply_bias(&c, &logits, &p).unwrap(), logits);
    }

    #[test]
    fn dipmark_green_set_size_is_ceil_gamma_v() {
        let mut c = cfg(WatermarkScheme::DipMark);
        c.gamma = 0.3;
        let p = green_list(&c, 31337, 10);
        assert_eq!(p.green_count(), 3);
        let p = green_list(&c, 31337, 11);
        assert_eq!(p.green_count(), 4); // ceil(3.3)
    }

    #[test]
    fn dipmark_membership_matches_single_token_replay() {
        let c = cfg(WatermarkScheme::DipMark);
        let p = green_list(&c, 4242, 64);
        for tok in 0..64 {
            assert_eq!(p.is_green(tok), is_green_token(&c, 4242, 64, tok));
        }
    }

    #[test]
    fn dipmark_reweight_is_normalized() {
        let c = cfg(WatermarkScheme::DipMark);
        let probs = [0.05, 0.25, 0.1, 0.3, 0.2, 0.1];
        let out = reweight_dipmark(&c, &probs, 999).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn dipmark_alpha_half_is_identity_for_every_permutation() {
        let probs = [0.4, 0.1, 0.2, 0.3];
        for seed in 0..50u64 {
            let perm = dipmark_permutation(seed, 4);
            let out = dipmark_reweight_with_permutation(&probs, &perm, 0.5).unwrap();
            assert_eq!(out, probs);
        }
    }

    // Distortion-freeness at realistic width: averaged over random
    // permutations the reweighted distribution recovers the input. Per-token
    // Monte-Carlo 3-sigma bands admit ~0.27% benign excursions, so the
    // violation count is held to its binomial bound instead of zero.
    #[test]
    fn dipmark_mean_over_random_permutations_recovers_input() {
        let v = 512usize;
        let trials = 4000usize;
        let mut g = SplitMix64::new(0xD1F);
        let mut probs: Vec<f64> = (0..v).map(|_| -g.next_f64().ln()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);

        let mut sum = vec![0.0f64; v];
        let mut sumsq = vec![0.0f64; v];
        for _ in 0..trials {
            let perm = dipmark_permutation(g.next_u64(), v);
            let out = dipmark_reweight_with_permutation(&probs, &perm, 0.3).unwrap();
            for i in 0..v {
                sum[i] += out[i];
                sumsq[i] += out[i] * out[i];
            }
        }
        let n = trials as f64;
        let mut beyond_3 = 0usize;
        for i in 0..v {
            let m = sum[i] / n;
            let var = (sumsq[i] / n - m * m).max(0.0);
            let se = (var / n).sqrt().max(1e-300);
            let dev = (m - probs[i]).abs() / se;
            assert!(dev <= 6.0, "token {i}: {dev:.2} standard errors off");
            if dev > 3.0 {
                beyond_3 += 1;
            }
        }
        // binomial(512, 0.0027) stays under 8 with overwhelming margin
        assert!(beyond_3 <= 8, "{beyond_3} of {v} tokens beyond 3 standard errors");
    }

    #[test]
    fn dipmark_small_alpha_empties_the_permutation_head() {
        // alpha -> 0 zeroes mass in the first half of the permuted CDF and
        // doubles it in the second half
        let probs = [0.25, 0.25, 0.25, 0.25];
        let perm = [0usize, 1, 2, 3];
        let out = dipmark_reweight_with_permutation(&probs, &perm, 1e-12).unwrap();
        assert!(out[0].abs() < 1e-9, "{out:?}");
        assert!(out[1].abs() < 1e-9, "{out:?}");
        assert!((out[2] - 0.5).abs() < 1e-9, "{out:?}");
        assert!((out[3] - 0.5).abs() < 1e-9, "{out:?}");
    }

    #[test]
    fn permutation_is_a_keyed_shuffle() {
        let a = dipmark_permutation(1, 16);
        let b = dipmark_permutation(1, 16);
        let c = dipmark_permutation(2, 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn z_hand_values() {
        let z = z_from_counts(150, 200, 0.5).unwrap();
        assert!((z - 50.0 / 50.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(z_from_counts(100, 200, 0.5).unwrap(), 0.0);
        assert!(matches!(z_from_counts(0, 0, 0.5), Err(Error::EmptySequence)));
    }

    #[test]
    fn survival_requires_positive_baseline() {
        assert_eq!(survival(3.0, 1.5).unwrap(), 2.0);
        let err = survival(3.0, 0.0).unwrap_err();
        assert!(err.to_string().starts_with("undefined survival"));
        assert!(survival(3.0, -1.0).is_err());
    }

    #[test]
    fn replay_reproduces_flags_from_tokens_alone() {
        let c = cfg(WatermarkScheme::Kgw);
        let tokens = [4usize, 9, 2, 2, 30, 11];
        let flags = replay_green_flags(&c, &tokens, 32);
        for (t, &tok) in tokens.iter().enumerate() {
            let seed = step_seed(&c, &tokens[..t]);
            let p = green_list(&c, seed, 32);
            assert_eq!(flags[t], p.is_green(tok));
        }
    }

    #[test]
    fn config_validation_bounds() {
        let mut c = cfg(WatermarkScheme::Kgw);
        assert!(c.validate().is_ok());
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        c.gamma = 0.5;
        c.delta = -0.1;
        assert!(c.validate().is_err());
        c.delta = 0.0;
        c.alpha = 0.6;
        assert!(c.validate().is_err());
        c.alpha = 0.5;
        assert!(c.validate().is_ok());
    }
}
