//! Deterministic synthetic token model.
//!
//! A tiny n-gram-style language model whose conditional distributions are
//! manufactured from a seed instead of learned: every context class gets a
//! fixed multinomial built from exponential variates raised to a
//! concentration exponent. Identical (vocab, order, seed, kappa) always
//! yields bit-identical tables, which is what makes every experiment in
//! this crate replayable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_mix, SplitMix64};

pub const MIN_VOCAB: usize = 8;
pub const DEFAULT_VOCAB: usize = 512;
pub const DEFAULT_ORDER: usize = 2;
pub const DEFAULT_CONCENTRATION: f64 = 2.0;
/// Hard cap on the number of context classes, whatever |V|^(order-1) says.
pub const MAX_CLASSES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < MIN_VOCAB {
            return Err(Error::InvalidConfig(format!(
                "vocabulary size {size} is below the minimum {MIN_VOCAB}"
            )));
        }
        Ok(Vocabulary { size })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary { size: DEFAULT_VOCAB }
    }
}

struct ClassTable {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    /// 1-based rank of each token id when sorted by descending probability,
    /// ties broken by ascending token id.
    rank_of: Vec<u32>,
    entropy: f64,
}

pub struct TokenModel {
    vocab: Vocabulary,
    order: usize,
    model_seed: u64,
    concentration: f64,
    classes: Vec<ClassTable>,
}

/// Summary statistics of a token sequence under the model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SequenceScore {
    pub mean_loglik: f64,
    pub perplexity: f64,
    pub mean_step_entropy: f64,
}

impl TokenModel {
    pub fn new(vocab: Vocabulary, order: usize, model_seed: u64) -> Result<Self> {
        Self::with_concentration(vocab, order, model_seed, DEFAULT_CONCENTRATION)
    }

    pub fn with_concentration(
        vocab: Vocabulary,
        order: usize,
        model_seed: u64,
        concentration: f64,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidConfig("model order must be at least 1".into()));
        }
        if !(concentration > 0.0) || !concentration.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "concentration exponent must be positive and finite, got {concentration}"
            )));
        }
        let n_classes = class_count(vocab.size(), order);
        let classes = (0..n_classes)
            .map(|k| build_class(vocab.size(), keyed_mix(model_seed, k as u64), concentration))
            .collect();
        Ok(TokenModel { vocab, order, model_seed, concentration, classes })
    }

    /// Builds a model directly from explicit conditional tables. Rows must
    /// be valid distributions over the vocabulary with strictly positive
    /// entries; contexts hash onto rows exactly as for generated tables.
    pub fn from_tables(vocab: Vocabulary, order: usize, model_seed: u64, tables: Vec<Vec<f64>>) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidConfig("model order must be at least 1".into()));
        }
        if tables.is_empty() {
            return Err(Error::InvalidConfig("at least one table row is required".into()));
        }
        let classes = tables
            .into_iter()
            .map(|row| {
                if row.len() != vocab.size() {
                    return Err(Error::LengthMismatch(format!(
                        "table row has {} entries for vocabulary of {}",
                        row.len(),
                        vocab.size()
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(p > 0.0)) {
                    return Err(Error::InvalidDistribution(
                        "table row must be a strictly positive distribution".into(),
                    ));
                }
                Ok(finish_class(row))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenModel {
            vocab,
            order,
            model_seed,
            concentration: DEFAULT_CONCENTRATION,
            classes,
        })
    }

    #[inline]
    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Maps a context (any length, may be empty) to its table row. Only the
    /// last `order - 1` tokens participate.
    pub fn class_of(&self, context: &[usize]) -> usize {
        if self.classes.len() == 1 {
            return 0;
        }
        let width = self.order - 1;
        let suffix = &context[context.len().saturating_sub(width)..];
        let mut h = keyed_mix(self.model_seed, 0x746F_6B65_6E73);
        for &t in suffix {
            h = keyed_mix(h, t as u64);
        }
        (h % self.classes.len() as u64) as usize
    }

    #[inline]
    pub fn conditional(&self, class: usize) -> &[f64] {
        &self.classes[class].probs
    }

    #[inline]
    pub fn log_conditional(&self, class: usize) -> &[f64] {
        &self.classes[class].log_probs
    }

    #[inline]
    pub fn class_entropy(&self, class: usize) -> f64 {
        self.classes[class].entropy
    }

    /// 1-based model-probability rank of `token` in the given class.
    #[inline]
    pub fn token_rank(&self, class: usize, token: usize) -> usize {
        self.classes[class].rank_of[token] as usize
    }

    /// Log-probabilities of every token given the context.
    pub fn logits(&self, context: &[usize]) -> Vec<f64> {
        self.log_conditional(self.class_of(context)).to_vec()
    }

    /// Mean log-likelihood, perplexity, and mean per-step model entropy of
    /// a sequence scored left to right. Pure function of the tokens.
    pub fn score(&self, tokens: &[usize]) -> Result<SequenceScore> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut loglik = 0.0;
        let mut entropy = 0.0;
        for (i, &tok) in tokens.iter().enumerate() {
            if tok >= self.vocab.size() {
                return Err(Error::InvalidConfig(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.vocab.size()
                )));
            }
            let class = self.class_of(&tokens[..i]);
            loglik += self.classes[class].log_probs[tok];
            entropy += self.classes[class].entropy;
        }
        let n = tokens.len() as f64;
        let mean_loglik = loglik / n;
        Ok(SequenceScore {
            mean_loglik,
            perplexity: (-mean_loglik).exp(),
            mean_step_entropy: entropy / n,
        })
    }
}

fn class_count(vocab: usize, order: usize) -> usize {
    let mut k: usize = 1;
    for _ in 0..order - 1 {
        k = k.saturating_mul(vocab);
        if k >= MAX_CLASSES {
            return MAX_CLASSES;
        }
    }
    k.min(MAX_CLASSES)
}

fn build_class(vocab: usize, seed: u64, concentration: f64) -> ClassTable {
    let mut g = SplitMix64::new(seed);
    let mut w: Vec<f64> = (0..vocab)
        .map(|_| {
            // Exp(1) by inverse CDF over the open interval, so every entry
            // stays strictly positive.
            let u = g.next_open_f64();
            (-(1.0 - u).ln()).powf(concentration)
        })
        .collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    finish_class(w)
}

fn finish_class(probs: Vec<f64>) -> ClassTable {
    let log_probs: Vec<f64> = probs.iter().map(|&p| p.ln()).collect();
    let entropy = -probs.iter().zip(&log_probs).map(|(&p, &lp)| p * lp).sum::<f64>();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut rank_of = vec![0u32; probs.len()];
    for (pos, &tok) in order.iter().enumerate() {
        rank_of[tok] = (pos + 1) as u32;
    }
    ClassTable { probs, log_probs, rank_of, entropy }
}
