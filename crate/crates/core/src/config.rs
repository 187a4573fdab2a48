//! Flat TOML run configuration. Every key is optional and overlays the
//! built-in defaults, so a config file only states what it changes.

use std::path::Path;

use serde::Deserialize;

use crate::attack::{AttackConfig, AttackMode, DefenseScope};
use crate::entropy::SourceKind;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentParams, DEFAULT_WATERMARK_KEY};
use crate::pipeline::PipelineConfig;
use crate::watermark::{WatermarkConfig, WatermarkScheme};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model_seed: Option<u64>,
    pub vocab_size: Option<usize>,
    /// Surrogate-table concentration for the experiment harness.
    pub concentration: Option<f64>,
    pub n_tokens: Option<usize>,
    pub temperature: Option<f64>,
    pub top_k: Option<usize>,
    /// kgw | unigram | dipmark | none
    pub scheme: Option<String>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub key: Option<u64>,
    pub context_width: Option<usize>,
    pub alpha: Option<f64>,
    /// off | aware | blind | steering
    pub mode: Option<String>,
    pub targets: Option<Vec<usize>>,
    pub target_count: Option<usize>,
    pub target_seed: Option<u64>,
    pub boost: Option<f64>,
    pub activation: Option<f64>,
    pub floor: Option<f64>,
    pub sigma: Option<u64>,
    /// honest | hijacked | qrng
    pub entropy_kind: Option<String>,
    pub run_seed: Option<u64>,
    /// entropy_only | full_provider
    pub defense_scope: Option<String>,
    pub reference_size: Option<usize>,
    pub replicates: Option<usize>,
    pub sweep_replicates: Option<usize>,
    pub orthogonality_replicates: Option<usize>,
    pub edit_rate: Option<f64>,
    pub base_seed: Option<u64>,
}

fn parse_scheme(s: &str) -> Result<Option<WatermarkScheme>> {
    match s {
        "kgw" => Ok(Some(WatermarkScheme::Kgw)),
        "unigram" => Ok(Some(WatermarkScheme::Unigram)),
        "dipmark" => Ok(Some(WatermarkScheme::DipMark)),
        "none" => Ok(None),
        other => Err(Error::InvalidConfig(format!(
            "unknown scheme {other:?}, expected kgw, unigram, dipmark, or none"
        ))),
    }
}

fn parse_mode(s: &str) -> Result<AttackMode> {
    match s {
        "off" => Ok(AttackMode::Off),
        "aware" => Ok(AttackMode::Aware),
        "blind" => Ok(AttackMode::Blind),
        "steering" => Ok(AttackMode::Steering),
        other => Err(Error::InvalidConfig(format!(
            "unknown mode {other:?}, expected off, aware, blind, or steering"
        ))),
    }
}

fn parse_entropy(s: &str) -> Result<SourceKind> {
    match s {
        "honest" => Ok(SourceKind::Honest),
        "hijacked" => Ok(SourceKind::Hijacked),
        "qrng" => Ok(SourceKind::Qrng),
        other => Err(Error::InvalidConfig(format!(
            "unknown entropy_kind {other:?}, expected honest, hijacked, or qrng"
        ))),
    }
}

fn parse_scope(s: &str) -> Result<DefenseScope> {
    match s {
        "entropy_only" => Ok(DefenseScope::EntropyOnly),
        "full_provider" => Ok(DefenseScope::FullProvider),
        other => Err(Error::InvalidConfig(format!(
            "unknown defense_scope {other:?}, expected entropy_only or full_provider"
        ))),
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The watermark described by the scheme fields; `scheme = "none"`
    /// yields no watermark. Defaults to kgw with the built-in key.
    pub fn watermark(&self) -> Result<Option<WatermarkConfig>> {
        let scheme = match self.scheme.as_deref() {
            None => Some(WatermarkScheme::Kgw),
            Some(s) => parse_scheme(s)?,
        };
        let Some(scheme) = scheme else { return Ok(None) };
        let mut w = WatermarkConfig::new(scheme, self.key.unwrap_or(DEFAULT_WATERMARK_KEY));
        if let Some(g) = self.gamma {
            w.gamma = g;
        }
        if let Some(d) = self.delta {
            w.delta = d;
        }
        if let Some(c) = self.context_width {
            w.context_width = c;
        }
        if let Some(a) = self.alpha {
            w.alpha = a;
        }
        w.validate()?;
        Ok(Some(w))
    }

    /// A single-run pipeline config. When an active attack mode is set
    /// without an explicit entropy kind, the attacker's stream is assumed.
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(v) = self.model_seed {
            cfg.model_seed = v;
        }
        if let Some(v) = self.vocab_size {
            cfg.vocab_size = v;
        }
        if let Some(v) = self.n_tokens {
            cfg.n_tokens = v;
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k = v;
        }
        cfg.watermark = self.watermark()?;

        let mode = match self.mode.as_deref() {
            None => AttackMode::Off,
            Some(s) => parse_mode(s)?,
        };
        let targets = match &self.targets {
            Some(t) => t.clone(),
            None => crate::attack::choose_targets(
                cfg.vocab_size,
                self.target_count.unwrap_or(crate::attack::DEFAULT_TARGET_COUNT),
                self.target_seed.unwrap_or(7),
            ),
        };
        let mut attack = AttackConfig::new(mode, targets);
        if let Some(v) = self.boost {
            attack.boost = v;
        }
        if let Some(v) = self.activation {
            attack.activation = v;
        }
        if let Some(v) = self.floor {
            attack.floor = v;
        }
        if let Some(v) = self.sigma {
            attack.sigma = v;
        }
        cfg.attack = attack;

        cfg.entropy_kind = match self.entropy_kind.as_deref() {
            Some(s) => parse_entropy(s)?,
            None if mode != AttackMode::Off => SourceKind::Hijacked,
            None => SourceKind::Honest,
        };
        if let Some(v) = self.run_seed {
            cfg.run_seed = v;
        }
        if let Some(s) = self.defense_scope.as_deref() {
            cfg.defense_scope = parse_scope(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Experiment parameters. Experiments measure watermark displacement,
    /// so `scheme = "none"` is rejected here.
    pub fn params(&self) -> Result<ExperimentParams> {
        let mut p = ExperimentParams::default();
        if let Some(v) = self.model_seed {
            p.model_seed = v;
        }
        if let Some(v) = self.vocab_size {
            p.vocab_size = v;
        }
        if let Some(v) = self.concentration {
            p.concentration = v;
        }
        if let Some(v) = self.n_tokens {
            p.n_tokens = v;
        }
        if let Some(v) = self.temperature {
            p.temperature = v;
        }
        if let Some(v) = self.top_k {
            p.top_k = v;
        }
        p.watermark = self.watermark()?.ok_or_else(|| {
            Error::InvalidConfig("experiments need a watermark scheme, got none".into())
        })?;
        if let Some(v) = self.boost {
            p.boost = v;
        }
        if let Some(v) = self.activation {
            p.activation = v;
        }
        if let Some(v) = self.floor {
            p.floor = v;
        }
        if let Some(v) = self.sigma {
            p.sigma = v;
        }
        p.targets = self.targets.clone();
        if let Some(v) = self.target_count {
            p.target_count = v;
        }
        if let Some(v) = self.target_seed {
            p.target_seed = v;
        }
        if let Some(v) = self.reference_size {
            p.reference_size = v;
        }
        if let Some(v) = self.replicates {
            p.replicates = v;
        }
        if let Some(v) = self.sweep_replicates {
            p.sweep_replicates = v;
        }
        if let Some(v) = self.orthogonality_replicates {
            p.orthogonality_replicates = v;
        }
        if let Some(v) = self.edit_rate {
            p.edit_rate = v;
        }
        if let Some(v) = self.base_seed {
            p.base_seed = v;
        }
        p.validate()?;
        Ok(p)
    }
}
