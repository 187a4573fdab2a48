//! The generation pipeline: synthetic model, optional watermark, optional
//! PRNG-layer attack, one entropy source, and a full per-step trace.
//!
//! Step order is fixed: model logits, watermark logit bias, temperature,
//! top-k truncation and renormalization, DipMark reweighting (the one
//! watermark action that lives in probability space), attack hook,
//! inverse-CDF draw. Per-step diagnostics (model rank, green flag, target
//! flag, log-probability, model entropy, gate activation) are recorded at
//! generation time; detectors consume these traces instead of re-deriving
//! them, which the deterministic surrogate model makes equivalent.

use serde::{Deserialize, Serialize};

use crate::attack::{attack_step, steer_step_traced, AttackConfig, AttackMode, DefenseScope};
use crate::entropy::{multinomial_draw, EntropySource, SourceKind};
use crate::error::{Error, Result};
use crate::model::{TokenModel, Vocabulary, DEFAULT_ORDER, DEFAULT_VOCAB};
use crate::watermark::{
    apply_bias, green_list, is_green_token, reweight_dipmark, step_seed, z_from_counts,
    WatermarkConfig, WatermarkScheme,
};

pub const DEFAULT_N_TOKENS: usize = 2000;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model_seed: u64,
    pub vocab_size: usize,
    pub n_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub watermark: Option<WatermarkConfig>,
    pub attack: AttackConfig,
    pub entropy_kind: SourceKind,
    pub run_seed: u64,
    pub defense_scope: DefenseScope,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model_seed: 1,
            vocab_size: DEFAULT_VOCAB,
            n_tokens: DEFAULT_N_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            top_k: DEFAULT_TOP_K,
            watermark: None,
            attack: AttackConfig::default(),
            entropy_kind: SourceKind::Honest,
            run_seed: 0,
            defense_scope: DefenseScope::FullProvider,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        Vocabulary::new(self.vocab_size)?;
        if self.n_tokens == 0 {
            return Err(Error::InvalidConfig("n_tokens must be at least 1".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if let Some(w) = &self.watermark {
            w.validate()?;
        }
        self.attack.validate(self.vocab_size)?;
        if self.attack.mode == AttackMode::Aware && self.watermark.is_none() {
            return Err(Error::MissingWatermarkKey);
        }
        if self.attack.mode != AttackMode::Off && self.entropy_kind == SourceKind::Honest {
            return Err(Error::InvalidConfig(
                "active attack modes require the hijacked or qrng entropy kind".into(),
            ));
        }
        Ok(())
    }
}

/// Full trace of one generated (or replayed) sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub config: PipelineConfig,
    pub tokens: Vec<usize>,
    /// 1-based model-probability rank of each sampled token.
    pub ranks: Vec<usize>,
    /// Green flags under the step partitions; absent without a watermark.
    pub green: Option<Vec<bool>>,
    /// Target-set membership of each sampled token.
    pub target: Vec<bool>,
    /// Model log-probability of each sampled token.
    pub loglik: Vec<f64>,
    /// Model conditional entropy (nats) at each step.
    pub entropy: Vec<f64>,
    /// Attack gate activations (all false for replayed records).
    pub activated: Vec<bool>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn green_count(&self) -> Option<usize> {
        self.green.as_ref().map(|g| g.iter().filter(|&&x| x).count())
    }

    pub fn green_fraction(&self) -> Option<f64> {
        self.green_count().map(|c| c as f64 / self.tokens.len() as f64)
    }

    pub fn target_rate(&self) -> f64 {
        if self.target.is_empty() {
            return 0.0;
        }
        self.target.iter().filter(|&&x| x).count() as f64 / self.target.len() as f64
    }

    pub fn activation_rate(&self) -> f64 {
        if self.activated.is_empty() {
            return 0.0;
        }
        self.activated.iter().filter(|&&x| x).count() as f64 / self.activated.len() as f64
    }

    pub fn mean_loglik(&self) -> f64 {
        self.loglik.iter().sum::<f64>() / self.loglik.len() as f64
    }

    pub fn perplexity(&self) -> f64 {
        (-self.mean_loglik()).exp()
    }

    pub fn mean_entropy(&self) -> f64 {
        self.entropy.iter().sum::<f64>() / self.entropy.len() as f64
    }

    /// Green-count z-score at the given gamma.
    pub fn z(&self, gamma: f64) -> Result<f64> {
        let count = self.green_count().ok_or(Error::MissingGreenFlags)?;
        z_from_counts(count, self.tokens.len(), gamma)
    }
}

/// Post-temperature top-k softmax over the full vocabulary; tokens outside
/// the kept set get exactly zero. Ties at the boundary resolve by token id.
fn softmax_top_k(logits: &[f64], k: usize) -> Vec<f64> {
    let n = logits.len();
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.select_nth_unstable_by(k - 1, |&a, &b| {
            logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b))
        });
        idx.truncate(k);
    }
    // fixed summation order keeps the arithmetic reproducible
    idx.sort_unstable();
    let max = idx.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; n];
    let mut total = 0.0;
    for &i in &idx {
        let e = (logits[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in &idx {
        out[i] /= total;
    }
    out
}

/// Runs one full generation under the config. Honest and hijacked entropy
/// kinds are bit-reproducible; qrng is not.
pub fn generate(config: &PipelineConfig) -> Result<SequenceRecord> {
    config.validate()?;
    let model = TokenModel::new(Vocabulary::new(config.vocab_size)?, DEFAULT_ORDER, config.model_seed)?;
    generate_with_model(&model, config)
}

/// Same as `generate` for a prebuilt model (experiments reuse one model
/// across hundreds of runs).
pub fn generate_with_model(model: &TokenModel, config: &PipelineConfig) -> Result<SequenceRecord> {
    config.validate()?;
    if model.vocab().size() != config.vocab_size {
        return Err(Error::LengthMismatch(format!(
            "model vocabulary {} does not match configured {}",
            model.vocab().size(),
            config.vocab_size
        )));
    }
    let v = config.vocab_size;
    let mut source = match config.entropy_kind {
        SourceKind::Honest => EntropySource::honest(config.run_seed),
        SourceKind::Hijacked => EntropySource::hijacked(config.attack.sigma),
        SourceKind::Qrng => EntropySource::qrng(),
    };
    // FullProvider scope: swapping in the QRNG removes the attacker's
    // library entirely, reweighting code included. EntropyOnly leaves the
    // reweighting hooks running on uncontrolled uniforms.
    let attack_disabled = config.entropy_kind == SourceKind::Qrng
        && config.defense_scope == DefenseScope::FullProvider;
    let mode = if attack_disabled { AttackMode::Off } else { config.attack.mode };

    let mut target_mask = vec![false; v];
    for &t in &config.attack.targets {
        target_mask[t] = true;
    }

    let n = config.n_tokens;
    let mut rec = SequenceRecord {
        config: config.clone(),
        tokens: Vec::with_capacity(n),
        ranks: Vec::with_capacity(n),
        green: config.watermark.as_ref().map(|_| Vec::with_capacity(n)),
        target: Vec::with_capacity(n),
        loglik: Vec::with_capacity(n),
        entropy: Vec::with_capacity(n),
        activated: Vec::with_capacity(n),
    };

    for _ in 0..n {
        let class = model.class_of(&rec.tokens);
        let partition = config.watermark.as_ref().map(|w| {
            let s = step_seed(w, &rec.tokens);
            green_list(w, s, v)
        });

        let mut logits = model.log_conditional(class).to_vec();
        if let (Some(w), Some(p)) = (&config.watermark, &partition) {
            logits = apply_bias(w, &logits, p)?;
        }
        for l in &mut logits {
            *l /= config.temperature;
        }
        let mut probs = softmax_top_k(&logits, config.top_k);
        if let Some(w) = &config.watermark {
            if w.scheme == WatermarkScheme::DipMark {
                let p = partition.as_ref().unwrap();
                probs = reweight_dipmark(w, &probs, p.step_seed)?;
            }
        }

        let (token, activated) = match mode {
            AttackMode::Off => (multinomial_draw(&mut source, &probs)?, false),
            AttackMode::Aware | AttackMode::Blind => {
                let mut cfg = config.attack.clone();
                cfg.mode = mode;
                let out = attack_step(&cfg, &probs, partition.as_ref(), &mut source)?;
                (multinomial_draw(&mut source, &out.probs)?, out.activated)
            }
            AttackMode::Steering => {
                let o = steer_step_traced(&config.attack, &probs, &mut source)?;
                (o.token, o.activated)
            }
        };

        rec.ranks.push(model.token_rank(class, token));
        if let (Some(flags), Some(p)) = (rec.green.as_mut(), &partition) {
            flags.push(p.is_green(token));
        }
        rec.target.push(target_mask[token]);
        rec.loglik.push(model.log_conditional(class)[token]);
        rec.entropy.push(model.class_entropy(class));
        rec.activated.push(activated);
        rec.tokens.push(token);
    }
    Ok(rec)
}

/// Rebuilds a full trace from published tokens alone: model diagnostics by
/// rescoring, green flags by keyed replay. This is the detector's view of
/// a sequence it did not generate (for instance after token editing).
pub fn record_from_tokens(
    model: &TokenModel,
    config: &PipelineConfig,
    tokens: &[usize],
) -> Result<SequenceRecord> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let v = model.vocab().size();
    let mut target_mask = vec![false; v];
    for &t in &config.attack.targets {
        if t < v {
            target_mask[t] = true;
        }
    }
    let mut rec = SequenceRecord {
        config: config.clone(),
        tokens: tokens.to_vec(),
        ranks: Vec::with_capacity(tokens.len()),
        green: config.watermark.as_ref().map(|_| Vec::with_capacity(tokens.len())),
        target: Vec::with_capacity(tokens.len()),
        loglik: Vec::with_capacity(tokens.len()),
        entropy: Vec::with_capacity(tokens.len()),
        activated: vec![false; tokens.len()],
    };
    for (i, &tok) in tokens.iter().enumerate() {
        if tok >= v {
            return Err(Error::InvalidConfig(format!(
                "token id {tok} outside vocabulary of {v}"
            )));
        }
        let class = model.class_of(&tokens[..i]);
        rec.ranks.push(model.token_rank(class, tok));
        if let (Some(flags), Some(w)) = (rec.green.as_mut(), &config.watermark) {
            let s = step_seed(w, &tokens[..i]);
            flags.push(is_green_token(w, s, v, tok));
        }
        rec.target.push(target_mask[tok]);
        rec.loglik.push(model.log_conditional(class)[tok]);
        rec.entropy.push(model.class_entropy(class));
    }
    Ok(rec)
}
