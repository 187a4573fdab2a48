//! PRNG-layer attacks on the sampling loop, plus the token-editing
//! baseline they are compared against.
//!
//! The attacker owns the randomness library underneath the sampler: it
//! fixes the stream seed (`sigma`) and may tamper with each step. Three
//! active modes:
//!
//! * `Aware`: knows the watermark key; multiplicatively boosts only the
//!   green members of the target set, so the watermark signal is amplified
//!   rather than eroded.
//! * `Blind`: boosts the whole target set without key knowledge.
//! * `Steering`: leaves probabilities alone and instead plants the
//!   uniform so the inverse-CDF draw lands on a target token. Only works
//!   while the attacker controls the stream; against an OS/QRNG source the
//!   hook has nothing to plant and goes inert.
//!
//! An activation gate keeps the edit rate low: each step fires only with
//! probability `activation`, and only when some target carries at least
//! `floor` probability.

use serde::{Deserialize, Serialize};

use crate::entropy::{inverse_cdf_index, multinomial_draw, steer_draw, validate_distribution, EntropySource, SourceKind};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::watermark::GreenPartition;

pub const DEFAULT_BOOST: f64 = 10.0;
pub const DEFAULT_ACTIVATION: f64 = 0.3;
pub const DEFAULT_FLOOR: f64 = 1e-4;
pub const DEFAULT_SIGMA: u64 = 42;
pub const DEFAULT_TARGET_COUNT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Aware,
    Blind,
    Steering,
    Off,
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackMode::Aware => "aware",
            AttackMode::Blind => "blind",
            AttackMode::Steering => "steering",
            AttackMode::Off => "off",
        };
        f.write_str(s)
    }
}

/// How far the QRNG defense reaches. `EntropyOnly` replaces just the
/// uniform stream, leaving any reweighting code the attacker shipped still
/// running; `FullProvider` models replacing the whole randomness provider,
/// which silences the reweighting path as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseScope {
    EntropyOnly,
    FullProvider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Token ids the attacker promotes. Kept sorted and deduplicated.
    pub targets: Vec<usize>,
    /// Multiplicative boost b >= 1 applied to targeted tokens.
    pub boost: f64,
    /// Per-step activation probability in [0, 1].
    pub activation: f64,
    /// Minimum target probability for the gate to fire.
    pub floor: f64,
    /// Attacker's fixed stream seed.
    pub sigma: u64,
    pub mode: AttackMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            targets: Vec::new(),
            boost: DEFAULT_BOOST,
            activation: DEFAULT_ACTIVATION,
            floor: DEFAULT_FLOOR,
            sigma: DEFAULT_SIGMA,
            mode: AttackMode::Off,
        }
    }
}

impl AttackConfig {
    pub fn new(mode: AttackMode, targets: Vec<usize>) -> Self {
        let mut cfg = AttackConfig { mode, targets, ..AttackConfig::default() };
        cfg.targets.sort_unstable();
        cfg.targets.dedup();
        cfg
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.mode != AttackMode::Off && self.targets.is_empty() {
            return Err(Error::InvalidConfig("active attack requires a nonempty target set".into()));
        }
        if !(self.boost >= 1.0) {
            return Err(Error::InvalidConfig(format!("boost must be >= 1, got {}", self.boost)));
        }
        if !(0.0..=1.0).contains(&self.activation) {
            return Err(Error::InvalidConfig(format!(
                "activation must be in [0, 1], got {}",
                self.activation
            )));
        }
        if !(0.0..1.0).contains(&self.floor) && self.floor != 1.0 {
            return Err(Error::InvalidConfig(format!("floor must be in [0, 1], got {}", self.floor)));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::InvalidConfig(format!(
                "target token {t} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(())
    }
}

/// Pseudorandom target set of the given size, independent of any watermark
/// key: a partial Fisher-Yates over the vocabulary.
pub fn choose_targets(vocab_size: usize, count: usize, seed: u64) -> Vec<usize> {
    let count = count.min(vocab_size);
    let mut pool: Vec<usize> = (0..vocab_size).collect();
    let mut g = SplitMix64::new(seed);
    for i in 0..count {
        let j = i + g.next_below((vocab_size - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut picked = pool[..count].to_vec();
    picked.sort_unstable();
    picked
}

/// Multiplicative reweighting: targeted tokens get weight `boost`, the
/// rest weight 1, then the distribution is renormalized. `boost = 1` and
/// an empty target set are exact identities.
pub fn reweight(probs: &[f64], targets: &[usize], boost: f64) -> Result<Vec<f64>> {
    validate_distribution(probs)?;
    if !(boost >= 1.0) {
        return Err(Error::InvalidConfig(format!("boost must be >= 1, got {boost}")));
    }
    if boost == 1.0 || targets.is_empty() {
        return Ok(probs.to_vec());
    }
    let mut out = probs.to_vec();
    for &t in targets {
        if t >= out.len() {
            return Err(Error::InvalidConfig(format!(
                "target token {t} outside distribution of {}",
                out.len()
            )));
        }
        out[t] *= boost;
    }
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// The step's operative target set: `Aware` intersects with the green
/// list, the key-free modes use the configured set unchanged.
pub fn effective_targets(config: &AttackConfig, partition: Option<&GreenPartition>) -> Result<Vec<usize>> {
    match config.mode {
        AttackMode::Aware => {
            let p = partition.ok_or(Error::MissingGreenList)?;
            Ok(config.targets.iter().copied().filter(|&t| p.is_green(t)).collect())
        }
        _ => Ok(config.targets.clone()),
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub probs: Vec<f64>,
    pub activated: bool,
}

/// One reweighting step. The gate consumes exactly one uniform from the
/// attacker's stream; inactive steps return the input distribution
/// unchanged. `Off` never touches the stream.
pub fn attack_step(
    config: &AttackConfig,
    probs: &[f64],
    partition: Option<&GreenPartition>,
    source: &mut EntropySource,
) -> Result<AttackOutcome> {
    if config.mode == AttackMode::Off {
        return Ok(AttackOutcome { probs: probs.to_vec(), activated: false });
    }
    let eff = effective_targets(config, partition)?;
    let u = source.next_uniform()?;
    let max_target = eff.iter().map(|&t| probs[t]).fold(0.0f64, f64::max);
    let activated = u < config.activation && max_target >= config.floor;
    let out = if activated {
        reweight(probs, &eff, config.boost)?
    } else {
        probs.to_vec()
    };
    Ok(AttackOutcome { probs: out, activated })
}

#[derive(Debug, Clone, Copy)]
pub struct SteerOutcome {
    pub token: usize,
    pub activated: bool,
}

/// Draw-steering step with trace. While the attacker controls the stream
/// (hijacked kind) an activated gate plants the uniform that lands the
/// draw on the heaviest target; any other source kind samples normally.
pub fn steer_step_traced(
    config: &AttackConfig,
    probs: &[f64],
    source: &mut EntropySource,
) -> Result<SteerOutcome> {
    if config.mode != AttackMode::Steering || source.kind() != SourceKind::Hijacked {
        let token = multinomial_draw(source, probs)?;
        return Ok(SteerOutcome { token, activated: false });
    }
    let u_gate = source.next_uniform()?;
    validate_distribution(probs)?;
    let max_target = config
        .targets
        .iter()
        .filter(|&&t| t < probs.len())
        .map(|&t| probs[t])
        .fold(0.0f64, f64::max);
    if u_gate < config.activation && max_target >= config.floor {
        if let Some(u) = steer_draw(probs, &config.targets)? {
            return Ok(SteerOutcome { token: inverse_cdf_index(probs, u), activated: true });
        }
    }
    let token = multinomial_draw(source, probs)?;
    Ok(SteerOutcome { token, activated: false })
}

/// Draw-steering step; token id only.
pub fn steer_step(config: &AttackConfig, probs: &[f64], source: &mut EntropySource) -> Result<usize> {
    steer_step_traced(config, probs, source).map(|o| o.token)
}

/// Content-side comparison baseline: each position is independently
/// replaced by a uniformly random vocabulary token with probability
/// `edit_rate`. Deterministic in `edit_seed`; length preserving.
pub fn token_edit_baseline(
    tokens: &[usize],
    edit_rate: f64,
    edit_seed: u64,
    vocab_size: usize,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&edit_rate) {
        return Err(Error::InvalidConfig(format!(
            "edit rate must be in [0, 1], got {edit_rate}"
        )));
    }
    let mut g = SplitMix64::new(edit_seed);
    Ok(tokens
        .iter()
        .map(|&tok| {
            if g.next_f64() < edit_rate {
                g.next_below(vocab_size as u64) as usize
            } else {
                tok
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::watermark::{green_list, WatermarkConfig, WatermarkScheme};

    #[test]
    fn reweight_hand_case() {
        let third = 1.0 / 3.0;
        let out = reweight(&[third, third, third], &[0], 3.0).unwrap();
        // exact rational result is (3/5, 1/5, 1/5); IEEE evaluation lands
        // within one ulp of the decimal literals
        assert!((out[0] - 0.6).abs() <= f64::EPSILON, "{}", out[0]);
        assert!((out[1] - 0.2).abs() <= f64::EPSILON);
        assert!((out[2] - 0.2).abs() <= f64::EPSILON);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_boost_and_empty_targets_are_exact_identities() {
        let probs = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(reweight(&probs, &[1, 3], 1.0).unwrap(), probs);
        assert_eq!(reweight(&probs, &[], 7.0).unwrap(), probs);
    }

    #[test]
    fn reweight_rejects_bad_inputs() {
        assert!(reweight(&[0.5, 0.6], &[0], 2.0).is_err());
        assert!(reweight(&[0.5, 0.5], &[0], 0.5).is_err());
        assert!(reweight(&[0.5, 0.5], &[9], 2.0).is_err());
    }

    #[test]
    fn aware_mode_intersects_with_green_list() {
        let w = WatermarkConfig::new(WatermarkScheme::Kgw, 7);
        let p = green_list(&w, 123, 64);
        let cfg = AttackConfig::new(AttackMode::Aware, (0..64).collect());
        let eff = effective_targets(&cfg, Some(&p)).unwrap();
        assert_eq!(eff.len(), p.green_count());
        assert!(eff.iter().all(|&t| p.is_green(t)));

        let err = effective_targets(&cfg, None).unwrap_err();
        assert_eq!(err.to_string(), "aware mode requires green list");
    }

    #[test]
    fn blind_mode_keeps_targets() {
        let cfg = AttackConfig::new(AttackMode::Blind, vec![3, 1, 3, 2]);
        assert_eq!(effective_targets(&cfg, None).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn gate_probability_extremes() {
        let probs = [0.25, 0.25, 0.25, 0.25];
        let mut cfg = AttackConfig::new(AttackMode::Blind, vec![0]);
        cfg.activation = 0.0;
        let mut src = EntropySource::hijacked(1);
        for _ in 0..20 {
            let o = attack_step(&cfg, &probs, None, &mut src).unwrap();
            assert!(!o.activated);
            assert_eq!(o.probs, probs);
        }

        cfg.activation = 1.0;
        cfg.floor = 0.0;
        let mut src = EntropySource::hijacked(1);
        for _ in 0..20 {
            assert!(attack_step(&cfg, &probs, None, &mut src).unwrap().activated);
        }

        cfg.floor = 1.0;
        let mut src = EntropySource::hijacked(1);
        for _ in 0..20 {
            assert!(!attack_step(&cfg, &probs, None, &mut src).unwrap().activated);
        }
    }

    #[test]
    fn gate_consumes_exactly_one_uniform() {
        let probs = [0.5, 0.5];
        let cfg = AttackConfig::new(AttackMode::Blind, vec![0]);
        let mut a = EntropySource::hijacked(77);
        let mut b = EntropySource::hijacked(77);
        for _ in 0..50 {
            attack_step(&cfg, &probs, None, &mut a).unwrap();
            b.next_uniform().unwrap();
        }
        assert_eq!(a.next_uniform().unwrap(), b.next_uniform().unwrap());
    }

    #[test]
    fn off_mode_is_a_pure_passthrough() {
        let probs = [0.5, 0.5];
        let cfg = AttackConfig::default();
        let mut src = EntropySource::hijacked(5);
        let before = src.clone();
        let o = attack_step(&cfg, &probs, None, &mut src).unwrap();
        assert!(!o.activated);
        assert_eq!(o.probs, probs);
        // stream untouched
        let mut b = before;
        assert_eq!(src.next_uniform().unwrap(), b.next_uniform().unwrap());
    }

    #[test]
    fn steering_lands_on_targets_when_active() {
        let probs = [0.1, 0.4, 0.2, 0.3];
        let mut cfg = AttackConfig::new(AttackMode::Steering, vec![0, 2]);
        cfg.activation = 1.0;
        cfg.floor = 0.0;
        let mut src = EntropySource::hijacked(9);
        for _ in 0..50 {
            let o = steer_step_traced(&cfg, &probs, &mut src).unwrap();
            assert!(o.activated);
            assert_eq!(o.token, 2); // heaviest target
        }
    }

    #[test]
    fn steering_is_inert_without_stream_control() {
        let probs = [0.1, 0.4, 0.2, 0.3];
        let mut cfg = AttackConfig::new(AttackMode::Steering, vec![0]);
        cfg.activation = 1.0;
        cfg.floor = 0.0;
        // honest source: same draws as plain sampling from the same seed
        let mut steered = EntropySource::honest(123);
        let mut plain = EntropySource::honest(123);
        for _ in 0..100 {
            let o = steer_step_traced(&cfg, &probs, &mut steered).unwrap();
            assert!(!o.activated);
            assert_eq!(o.token, multinomial_draw(&mut plain, &probs).unwrap());
        }
    }

    #[test]
    fn steering_off_mode_matches_honest_draws() {
        let probs = [0.3, 0.3, 0.4];
        let cfg = AttackConfig::default();
        let mut a = EntropySource::hijacked(55);
        let mut b = EntropySource::hijacked(55);
        for _ in 0..50 {
            assert_eq!(
                steer_step(&cfg, &probs, &mut a).unwrap(),
                multinomial_draw(&mut b, &probs).unwrap()
            );
        }
    }

    #[test]
    fn steering_falls_back_on_zero_mass_targets() {
        let probs = [0.5, 0.5, 0.0];
        let mut cfg = AttackConfig::new(AttackMode::Steering, vec![2]);
        cfg.activation = 1.0;
        cfg.floor = 0.0;
        let mut src = EntropySource::hijacked(4);
        for _ in 0..20 {
            let o = steer_step_traced(&cfg, &probs, &mut src).unwrap();
            assert!(!o.activated);
            assert!(o.token < 2);
        }
    }

    #[test]
    fn token_edit_rate_extremes() {
        let tokens: Vec<usize> = (0..500).map(|i| i % 16).collect();
        assert_eq!(token_edit_baseline(&tokens, 0.0, 1, 16).unwrap(), tokens);

        let edited = token_edit_baseline(&tokens, 1.0, 1, 512).unwrap();
        assert_eq!(edited.len(), tokens.len());
        let same = edited.iter().zip(&tokens).filter(|(a, b)| a == b).count();
        // replacement is uniform over the whole vocabulary, so a ~1/512
        // coincidence rate survives
        assert!(same < 10, "{same} positions unchanged");
    }

    #[test]
    fn token_edit_is_deterministic_in_its_seed() {
        let tokens: Vec<usize> = (0..200).collect();
        let a = token_edit_baseline(&tokens, 0.15, 99, 512).unwrap();
        let b = token_edit_baseline(&tokens, 0.15, 99, 512).unwrap();
        let c = token_edit_baseline(&tokens, 0.15, 100, 512).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn target_choice_is_seeded_and_sorted() {
        let a = choose_targets(512, 32, 7);
        let b = choose_targets(512, 32, 7);
        let c = choose_targets(512, 32, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 32);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&t| t < 512));
    }

    #[test]
    fn config_validation() {
        let mut cfg = AttackConfig::new(AttackMode::Blind, vec![1]);
        assert!(cfg.validate(512).is_ok());
        cfg.targets.clear();
        assert!(cfg.validate(512).is_err());
        cfg.mode = AttackMode::Off;
        assert!(cfg.validate(512).is_ok());
        cfg.boost = 0.9;
        assert!(cfg.validate(512).is_err());
    }

    // Boosting only green targets can never lower the green mass: with
    // m = p(T ∩ G) and g = p(G), the attacked green mass is
    // (g + (b-1)m) / (1 + (b-1)m) >= g. Checked by brute force over every
    // half-green partition of an 8-token vocabulary.
    #[test]
    fn aware_boost_never_lowers_green_mass() {
        let softmax = |logits: &[f64]| {
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let mut g = SplitMix64::new(0xA11CE);
        for trial in 0..6 {
            let logits: Vec<f64> = (0..8).map(|_| 4.0 * g.next_f64()).collect();
            let targets: Vec<usize> = (0..8).filter(|_| g.next_f64() < 0.5).collect();
            let boost = [2.0, 3.0, 10.0][trial % 3];
            let delta = [0.5, 2.0][trial % 2];
            for mask in 0u16..256 {
                if mask.count_ones() != 4 {
                    continue;
                }
                let green: Vec<usize> = (0..8).filter(|&i| mask & (1 << i) != 0).collect();
                let mut biased = logits.clone();
                for &i in &green {
                    biased[i] += delta;
                }
                let probs = softmax(&biased);
                let eff: Vec<usize> =
                    targets.iter().copied().filter(|t| green.contains(t)).collect();
                let attacked = reweight(&probs, &eff, boost).unwrap();
                let mass = |p: &[f64]| green.iter().map(|&i| p[i]).sum::<f64>();
                assert!(
                    mass(&attacked) >= mass(&probs) - 1e-12,
                    "green mass dropped: {} -> {}",
                    mass(&probs),
                    mass(&attacked)
                );
            }
        }
    }

    // With an OS-entropy source the steering hook has no stream to plant,
    // so sampled tokens must follow the honest distribution in law.
    #[test]
    fn steering_under_os_entropy_matches_honest_law() {
        let probs = [0.05, 0.10, 0.15, 0.20, 0.22, 0.28];
        let mut cfg = AttackConfig::new(AttackMode::Steering, vec![0, 5]);
        cfg.activation = 1.0;
        cfg.floor = 0.0;
        let mut src = EntropySource::qrng();
        let n = 100_000usize;
        let mut counts = [0u64; 6];
        for _ in 0..n {
            let o = steer_step_traced(&cfg, &probs, &mut src).unwrap();
            assert!(!o.activated);
            counts[o.token] += 1;
        }
        let expected: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        let p = crate::stats::chi_square_p_value(&counts, &expected).unwrap();
        assert!(p > 0.001, "goodness-of-fit p = {p}, counts {counts:?}");
    }
}
