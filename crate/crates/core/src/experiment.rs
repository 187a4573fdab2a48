//! Experiment harness: the four standard comparison grids.
//!
//! * `detection_matrix`: key-aware attack, key-blind attack, a token-editing
//!   baseline, and untouched holdouts, all scored by the detector suite
//!   against a shared honest reference corpus.
//! * `sweep`: activation-rate by boost grid for the blind attack.
//! * `orthogonality`: blind attack across watermark strengths, testing
//!   whether the delivered target rate depends on delta at all.
//! * `qrng_defense`: draw steering with and without a hardware-entropy
//!   provider swap.
//!
//! Every per-run result flattens to one `ExperimentRow` with a fixed column
//! set, so CSV output from any experiment shares one schema. Replicates are
//! paired: replicate r of an attack condition reuses the seeds of replicate
//! r of its baseline, and attacked runs get per-replicate attacker seeds
//! (the attack stream is seeded by sigma, so varying sigma is what makes
//! hijacked replicates differ).

use serde::{Deserialize, Serialize};

use crate::attack::{
    choose_targets, token_edit_baseline, AttackConfig, AttackMode, DefenseScope, DEFAULT_ACTIVATION,
    DEFAULT_BOOST, DEFAULT_FLOOR, DEFAULT_SIGMA, DEFAULT_TARGET_COUNT,
};
use crate::detect::{build_reference, run_suite, DetectorReport, ReferenceStats, MIN_REFERENCE_SEQUENCES, MIN_REFERENCE_TOKENS};
use crate::entropy::SourceKind;
use crate::error::{Error, Result};
use crate::model::{TokenModel, Vocabulary, DEFAULT_ORDER, DEFAULT_VOCAB};
use crate::pipeline::{
    generate_with_model, record_from_tokens, PipelineConfig, SequenceRecord, DEFAULT_N_TOKENS,
    DEFAULT_TEMPERATURE, DEFAULT_TOP_K,
};
use crate::rng::keyed_mix;
use crate::stats::{coefficient_of_variation, mean, pearson, pearson_p_value, sample_std};
use crate::watermark::{WatermarkConfig, WatermarkScheme};

pub const DEFAULT_WATERMARK_KEY: u64 = 0xD811_57A3_0C3B_2F6D;
pub const DEFAULT_REFERENCE_SIZE: usize = 32;
pub const DEFAULT_REPLICATES: usize = 50;
pub const DEFAULT_SWEEP_REPLICATES: usize = 10;
pub const DEFAULT_ORTHOGONALITY_REPLICATES: usize = 20;
pub const DEFAULT_EDIT_RATE: f64 = 0.15;

/// Replicate seeds start here so they never collide with reference-corpus
/// seeds (base_seed .. base_seed + reference_size).
const REPLICATE_SEED_OFFSET: u64 = 1_000_000;
const EDIT_SEED_TAG: u64 = 0x7ED1_7000_0000_0000;

/// Calibrated so a KGW delta=2, gamma=0.5 baseline at N=2000 sits well
/// below green saturation (green fraction ~ 0.88, z ~ 34). Redirected
/// blind-attack tokens are ~95% green because the boost multiplies the
/// already-biased probabilities, so attacks amplify z only while the
/// baseline stays under that ceiling; at the model default the baseline
/// saturates above it and every attack contrast inverts.
pub const EXPERIMENT_CONCENTRATION: f64 = 6.0;

pub const SWEEP_ACTIVATIONS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];
pub const SWEEP_BOOSTS: [f64; 4] = [10.0, 30.0, 50.0, 100.0];
pub const ORTHOGONALITY_DELTAS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
pub const ORTHOGONALITY_ACTIVATION: f64 = 0.7;
pub const ORTHOGONALITY_BOOST: f64 = 50.0;

pub const COND_HOLDOUT: &str = "holdout";
pub const COND_AWARE: &str = "aware";
pub const COND_BLIND: &str = "blind";
pub const COND_TOKEN_EDIT: &str = "token_edit";
pub const COND_SWEEP: &str = "sweep";
pub const COND_ORTHO_BASELINE: &str = "orthogonality_baseline";
pub const COND_ORTHO_ATTACK: &str = "orthogonality_attack";
pub const COND_DEFENSE_BASELINE: &str = "baseline";
pub const COND_HIJACKED_STEERING: &str = "hijacked_steering";
pub const COND_QRNG_DEFENDED: &str = "qrng_defended";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub model_seed: u64,
    pub vocab_size: usize,
    /// Concentration exponent of the surrogate's conditional tables. The
    /// experiments run sharper tables than the model's own default so the
    /// watermarked green fraction stays below saturation and the attacks
    /// keep headroom to move z; see `EXPERIMENT_CONCENTRATION`.
    pub concentration: f64,
    pub n_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub watermark: WatermarkConfig,
    pub boost: f64,
    pub activation: f64,
    pub floor: f64,
    pub sigma: u64,
    /// Explicit target set; `None` draws `target_count` tokens from
    /// `target_seed`.
    pub targets: Option<Vec<usize>>,
    pub target_count: usize,
    pub target_seed: u64,
    pub reference_size: usize,
    pub replicates: usize,
    pub sweep_replicates: usize,
    pub orthogonality_replicates: usize,
    pub edit_rate: f64,
    pub base_seed: u64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            model_seed: 1,
            vocab_size: DEFAULT_VOCAB,
            concentration: EXPERIMENT_CONCENTRATION,
            n_tokens: DEFAULT_N_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            top_k: DEFAULT_TOP_K,
            watermark: WatermarkConfig::new(WatermarkScheme::Kgw, DEFAULT_WATERMARK_KEY),
            boost: DEFAULT_BOOST,
            activation: DEFAULT_ACTIVATION,
            floor: DEFAULT_FLOOR,
            sigma: DEFAULT_SIGMA,
            targets: None,
            target_count: DEFAULT_TARGET_COUNT,
            target_seed: 7,
            reference_size: DEFAULT_REFERENCE_SIZE,
            replicates: DEFAULT_REPLICATES,
            sweep_replicates: DEFAULT_SWEEP_REPLICATES,
            orthogonality_replicates: DEFAULT_ORTHOGONALITY_REPLICATES,
            edit_rate: DEFAULT_EDIT_RATE,
            base_seed: 0,
        }
    }
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        Vocabulary::new(self.vocab_size)?;
        self.watermark.validate()?;
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "concentration must be positive and finite, got {}",
                self.concentration
            )));
        }
        if self.n_tokens < MIN_REFERENCE_TOKENS {
            return Err(Error::InvalidConfig(format!(
                "experiments need n_tokens >= {MIN_REFERENCE_TOKENS}, got {}",
                self.n_tokens
            )));
        }
        if self.reference_size < MIN_REFERENCE_SEQUENCES {
            return Err(Error::InvalidConfig(format!(
                "reference_size must be at least {MIN_REFERENCE_SEQUENCES}, got {}",
                self.reference_size
            )));
        }
        if self.replicates < 2 || self.orthogonality_replicates < 2 {
            return Err(Error::InvalidConfig(
                "replicate counts must be at least 2".into(),
            ));
        }
        if self.sweep_replicates < 1 {
            return Err(Error::InvalidConfig("sweep_replicates must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.edit_rate) {
            return Err(Error::InvalidConfig(format!(
                "edit_rate must be in [0, 1], got {}",
                self.edit_rate
            )));
        }
        if let Some(t) = &self.targets {
            if t.iter().any(|&x| x >= self.vocab_size) {
                return Err(Error::InvalidConfig(
                    "explicit target outside the vocabulary".into(),
                ));
            }
        } else if self.target_count == 0 || self.target_count > self.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "target_count must be in 1..={}, got {}",
                self.vocab_size, self.target_count
            )));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<TokenModel> {
        TokenModel::with_concentration(
            Vocabulary::new(self.vocab_size)?,
            DEFAULT_ORDER,
            self.model_seed,
            self.concentration,
        )
    }

    pub fn target_set(&self) -> Vec<usize> {
        match &self.targets {
            Some(t) => {
                let mut t = t.clone();
                t.sort_unstable();
                t.dedup();
                t
            }
            None => choose_targets(self.vocab_size, self.target_count, self.target_seed),
        }
    }

    fn replicate_seed(&self, r: usize) -> u64 {
        self.base_seed + REPLICATE_SEED_OFFSET + r as u64
    }

    fn attacker_seed(&self, r: usize) -> u64 {
        self.sigma.wrapping_add(r as u64)
    }

    fn edit_seed(&self, r: usize) -> u64 {
        keyed_mix(self.base_seed, EDIT_SEED_TAG ^ r as u64)
    }

    fn base_pipeline(&self, targets: &[usize]) -> PipelineConfig {
        PipelineConfig {
            model_seed: self.model_seed,
            vocab_size: self.vocab_size,
            n_tokens: self.n_tokens,
            temperature: self.temperature,
            top_k: self.top_k,
            watermark: Some(self.watermark),
            attack: AttackConfig {
                targets: targets.to_vec(),
                boost: self.boost,
                activation: self.activation,
                floor: self.floor,
                sigma: self.sigma,
                mode: AttackMode::Off,
            },
            entropy_kind: SourceKind::Honest,
            run_seed: 0,
            defense_scope: DefenseScope::FullProvider,
        }
    }

    /// Honest watermarked generation; targets are carried for rate
    /// bookkeeping only.
    fn honest_config(&self, targets: &[usize], run_seed: u64) -> PipelineConfig {
        PipelineConfig { run_seed, ..self.base_pipeline(targets) }
    }

    fn attack_pipeline(&self, mode: AttackMode, targets: &[usize], r: usize) -> PipelineConfig {
        let mut cfg = self.base_pipeline(targets);
        cfg.attack.mode = mode;
        cfg.attack.sigma = self.attacker_seed(r);
        cfg.entropy_kind = SourceKind::Hijacked;
        cfg.run_seed = self.replicate_seed(r);
        cfg
    }
}

/// One generated or replayed run, flattened for reporting. Optional fields
/// are absent where the condition does not define them (no watermark, no
/// active attack, no detector pass).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub condition_id: String,
    pub scheme: String,
    pub mode: String,
    pub entropy_kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_act: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<u64>,
    pub n_tokens: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub green_fraction: Option<f64>,
    pub target_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survival: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_ks: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_div: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetition: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger_count: Option<usize>,
}

pub const ROW_HEADER: &str = "condition_id,scheme,mode,entropy_kind,gamma,delta,alpha,b,p_act,p_min,sigma,n_tokens,seed,z,green_fraction,target_rate,survival,rank_ks,kl_div,perplexity_f,entropy_f,repetition,loglik_f,trigger_count";

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_u(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ExperimentRow {
    pub fn from_record(
        condition_id: &str,
        record: &SequenceRecord,
        report: Option<&DetectorReport>,
        survival: Option<f64>,
    ) -> Self {
        let cfg = &record.config;
        let wm = cfg.watermark.as_ref();
        let active_attack = cfg.attack.mode != AttackMode::Off;
        let z = wm.and_then(|w| record.z(w.gamma).ok());
        ExperimentRow {
            condition_id: condition_id.to_string(),
            scheme: wm.map(|w| w.scheme.to_string()).unwrap_or_else(|| "none".into()),
            mode: cfg.attack.mode.to_string(),
            entropy_kind: cfg.entropy_kind.to_string(),
            gamma: wm.map(|w| w.gamma),
            delta: wm.filter(|w| w.scheme != WatermarkScheme::DipMark).map(|w| w.delta),
            alpha: wm.filter(|w| w.scheme == WatermarkScheme::DipMark).map(|w| w.alpha),
            b: active_attack.then_some(cfg.attack.boost),
            p_act: active_attack.then_some(cfg.attack.activation),
            p_min: active_attack.then_some(cfg.attack.floor),
            sigma: (cfg.entropy_kind == SourceKind::Hijacked).then_some(cfg.attack.sigma),
            n_tokens: record.len(),
            seed: cfg.run_seed,
            z,
            green_fraction: record.green_fraction(),
            target_rate: record.target_rate(),
            survival,
            rank_ks: report.map(|r| r.rank_ks),
            kl_div: report.map(|r| r.kl_div),
            perplexity_f: report.map(|r| r.perplexity_f),
            entropy_f: report.map(|r| r.entropy_f),
            repetition: report.map(|r| r.repetition),
            loglik_f: report.map(|r| r.loglik_f),
            trigger_count: report.map(|r| r.trigger_count),
        }
    }

    pub fn to_csv_line(&self) -> String {
        [
            csv_field(&self.condition_id),
            csv_field(&self.scheme),
            csv_field(&self.mode),
            csv_field(&self.entropy_kind),
            opt_f(self.gamma),
            opt_f(self.delta),
            opt_f(self.alpha),
            opt_f(self.b),
            opt_f(self.p_act),
            opt_f(self.p_min),
            opt_u(self.sigma),
            self.n_tokens.to_string(),
            self.seed.to_string(),
            opt_f(self.z),
            opt_f(self.green_fraction),
            self.target_rate.to_string(),
            opt_f(self.survival),
            opt_f(self.rank_ks),
            opt_f(self.kl_div),
            opt_f(self.perplexity_f),
            opt_f(self.entropy_f),
            opt_f(self.repetition),
            opt_f(self.loglik_f),
            opt_u(self.trigger_count.map(|x| x as u64)),
        ]
        .join(",")
    }
}

pub fn rows_to_csv(rows: &[ExperimentRow]) -> String {
    let mut out = String::from(ROW_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition_id: String,
    pub replicates: usize,
    pub mean_z: f64,
    pub mean_survival: Option<f64>,
    pub mean_target_rate: f64,
    /// Fraction of replicates with zero detector triggers.
    pub clean_fraction: f64,
    pub mean_trigger_count: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixResult {
    pub rows: Vec<ExperimentRow>,
    pub conditions: Vec<ConditionSummary>,
}

fn summarize_condition(condition_id: &str, rows: &[ExperimentRow]) -> ConditionSummary {
    let mine: Vec<&ExperimentRow> = rows.iter().filter(|r| r.condition_id == condition_id).collect();
    let zs: Vec<f64> = mine.iter().filter_map(|r| r.z).collect();
    let survivals: Vec<f64> = mine.iter().filter_map(|r| r.survival).collect();
    let rates: Vec<f64> = mine.iter().map(|r| r.target_rate).collect();
    let triggers: Vec<f64> = mine.iter().filter_map(|r| r.trigger_count.map(|t| t as f64)).collect();
    let clean = mine
        .iter()
        .filter_map(|r| r.trigger_count)
        .filter(|&t| t == 0)
        .count();
    let scored = mine.iter().filter(|r| r.trigger_count.is_some()).count();
    ConditionSummary {
        condition_id: condition_id.to_string(),
        replicates: mine.len(),
        mean_z: mean(&zs),
        mean_survival: if survivals.is_empty() { None } else { Some(mean(&survivals)) },
        mean_target_rate: mean(&rates),
        clean_fraction: if scored == 0 { 0.0 } else { clean as f64 / scored as f64 },
        mean_trigger_count: mean(&triggers),
    }
}

/// Builds the shared honest reference corpus for detector calibration.
pub fn reference_corpus(
    model: &TokenModel,
    params: &ExperimentParams,
    targets: &[usize],
) -> Result<ReferenceStats> {
    let mut refs = Vec::with_capacity(params.reference_size);
    for i in 0..params.reference_size {
        let cfg = params.honest_config(targets, params.base_seed + i as u64);
        refs.push(generate_with_model(model, &cfg)?);
    }
    build_reference(&refs, params.vocab_size)
}

pub const MIN_MATRIX_REFERENCE: usize = 16;

/// Key-aware and key-blind reweighting, a token-editing baseline at the
/// configured edit rate, and clean holdouts, each replicated with paired
/// seeds and scored by the full detector suite.
pub fn detection_matrix(params: &ExperimentParams) -> Result<MatrixResult> {
    params.validate()?;
    if params.reference_size < MIN_MATRIX_REFERENCE {
        return Err(Error::InvalidConfig(format!(
            "detection matrix needs reference_size >= {MIN_MATRIX_REFERENCE}, got {}",
            params.reference_size
        )));
    }
    let model = params.build_model()?;
    let targets = params.target_set();
    let reference = reference_corpus(&model, params, &targets)?;

    let mut baselines = Vec::with_capacity(params.replicates);
    let mut baseline_z = Vec::with_capacity(params.replicates);
    for r in 0..params.replicates {
        let cfg = params.honest_config(&targets, params.replicate_seed(r));
        let rec = generate_with_model(&model, &cfg)?;
        baseline_z.push(rec.z(params.watermark.gamma)?);
        baselines.push(rec);
    }

    let mut rows = Vec::new();
    for rec in &baselines {
        let report = run_suite(rec, &reference, None)?;
        rows.push(ExperimentRow::from_record(COND_HOLDOUT, rec, Some(&report), None));
    }
    for (cond, mode) in [(COND_AWARE, AttackMode::Aware), (COND_BLIND, AttackMode::Blind)] {
        for r in 0..params.replicates {
            let cfg = params.attack_pipeline(mode, &targets, r);
            let rec = generate_with_model(&model, &cfg)?;
            let report = run_suite(&rec, &reference, Some(baseline_z[r]))?;
            rows.push(ExperimentRow::from_record(cond, &rec, Some(&report), report.survival));
        }
    }
    for (r, baseline) in baselines.iter().enumerate() {
        let edited = token_edit_baseline(
            &baseline.tokens,
            params.edit_rate,
            params.edit_seed(r),
            params.vocab_size,
        )?;
        let rec = record_from_tokens(&model, &baseline.config, &edited)?;
        let report = run_suite(&rec, &reference, Some(baseline_z[r]))?;
        rows.push(ExperimentRow::from_record(COND_TOKEN_EDIT, &rec, Some(&report), report.survival));
    }

    let conditions = [COND_HOLDOUT, COND_AWARE, COND_BLIND, COND_TOKEN_EDIT]
        .iter()
        .map(|c| summarize_condition(c, &rows))
        .collect();
    Ok(MatrixResult { rows, conditions })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub p_act: f64,
    pub b: f64,
    pub replicates: usize,
    pub mean_z: f64,
    pub std_z: f64,
    pub mean_target_rate: f64,
    pub mean_activation_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<ExperimentRow>,
    pub cells: Vec<SweepCell>,
}

pub const SWEEP_HEADER: &str = "p_act,b,replicates,mean_z,std_z,mean_target_rate,mean_activation_rate";

pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for c in &result.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.p_act, c.b, c.replicates, c.mean_z, c.std_z, c.mean_target_rate, c.mean_activation_rate
        ));
    }
    out
}

/// Blind-attack grid over activation probability and boost. Cells share
/// one set of attacker seeds, so differences between cells are not seed
/// noise.
pub fn sweep(params: &ExperimentParams) -> Result<SweepResult> {
    params.validate()?;
    let model = params.build_model()?;
    let targets = params.target_set();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &p_act in &SWEEP_ACTIVATIONS {
        for &b in &SWEEP_BOOSTS {
            let mut zs = Vec::with_capacity(params.sweep_replicates);
            let mut rates = Vec::with_capacity(params.sweep_replicates);
            let mut acts = Vec::with_capacity(params.sweep_replicates);
            for r in 0..params.sweep_replicates {
                let mut cfg = params.attack_pipeline(AttackMode::Blind, &targets, r);
                cfg.attack.activation = p_act;
                cfg.attack.boost = b;
                let rec = generate_with_model(&model, &cfg)?;
                zs.push(rec.z(params.watermark.gamma)?);
                rates.push(rec.target_rate());
                acts.push(rec.activation_rate());
                rows.push(ExperimentRow::from_record(COND_SWEEP, &rec, None, None));
            }
            cells.push(SweepCell {
                p_act,
                b,
                replicates: params.sweep_replicates,
                mean_z: mean(&zs),
                std_z: sample_std(&zs),
                mean_target_rate: mean(&rates),
                mean_activation_rate: mean(&acts),
            });
        }
    }
    Ok(SweepResult { rows, cells })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthogonalityLevel {
    pub delta: f64,
    pub replicates: usize,
    pub mean_baseline_z: f64,
    pub mean_attack_z: f64,
    pub mean_target_rate: f64,
    pub mean_survival: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthogonalitySummary {
    /// Pearson r of delta against mean target rate; absent when the rate
    /// column is constant.
    pub pearson_r: Option<f64>,
    pub p_value: Option<f64>,
    pub cv_target_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthogonalityResult {
    pub rows: Vec<ExperimentRow>,
    pub levels: Vec<OrthogonalityLevel>,
    pub summary: OrthogonalitySummary,
}

pub const ORTHOGONALITY_HEADER: &str =
    "delta,replicates,mean_baseline_z,mean_attack_z,mean_target_rate,mean_survival,pearson_r,p_value,cv_target_rate";

pub fn orthogonality_to_csv(result: &OrthogonalityResult) -> String {
    let mut out = String::from(ORTHOGONALITY_HEADER);
    out.push('\n');
    // summary columns repeat on every level row to keep the schema flat
    let r = opt_f(result.summary.pearson_r);
    let p = opt_f(result.summary.p_value);
    for l in &result.levels {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            l.delta,
            l.replicates,
            l.mean_baseline_z,
            l.mean_attack_z,
            l.mean_target_rate,
            l.mean_survival,
            r,
            p,
            result.summary.cv_target_rate
        ));
    }
    out
}

/// Blind attack at a fixed operating point across watermark strengths.
/// If the attack runs below the watermark rather than against it, the
/// delivered target rate should not move with delta.
pub fn orthogonality(params: &ExperimentParams) -> Result<OrthogonalityResult> {
    params.validate()?;
    let model = params.build_model()?;
    let targets = params.target_set();
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for (li, &delta) in ORTHOGONALITY_DELTAS.iter().enumerate() {
        let mut level_params = params.clone();
        level_params.watermark.delta = delta;
        level_params.activation = ORTHOGONALITY_ACTIVATION;
        level_params.boost = ORTHOGONALITY_BOOST;
        let mut base_z = Vec::new();
        let mut attack_z = Vec::new();
        let mut rates = Vec::new();
        let mut survivals = Vec::new();
        for r in 0..params.orthogonality_replicates {
            // independent seeds per (level, replicate): sharing seeds across
            // levels would couple the level means and distort the p-value
            let k = li * params.orthogonality_replicates + r;
            let cfg = level_params.honest_config(&targets, level_params.replicate_seed(k));
            let baseline = generate_with_model(&model, &cfg)?;
            let zb = baseline.z(level_params.watermark.gamma)?;
            rows.push(ExperimentRow::from_record(COND_ORTHO_BASELINE, &baseline, None, None));

            let cfg = level_params.attack_pipeline(AttackMode::Blind, &targets, k);
            let rec = generate_with_model(&model, &cfg)?;
            let za = rec.z(level_params.watermark.gamma)?;
            let surv = crate::watermark::survival(za, zb)?;
            rows.push(ExperimentRow::from_record(COND_ORTHO_ATTACK, &rec, None, Some(surv)));

            base_z.push(zb);
            attack_z.push(za);
            rates.push(rec.target_rate());
            survivals.push(surv);
        }
        levels.push(OrthogonalityLevel {
            delta,
            replicates: params.orthogonality_replicates,
            mean_baseline_z: mean(&base_z),
            mean_attack_z: mean(&attack_z),
            mean_target_rate: mean(&rates),
            mean_survival: mean(&survivals),
        });
    }
    let deltas: Vec<f64> = levels.iter().map(|l| l.delta).collect();
    let rates: Vec<f64> = levels.iter().map(|l| l.mean_target_rate).collect();
    let pearson_r = pearson(&deltas, &rates);
    let summary = OrthogonalitySummary {
        pearson_r,
        p_value: pearson_r.and_then(|r| pearson_p_value(r, levels.len())),
        cv_target_rate: coefficient_of_variation(&rates),
    };
    Ok(OrthogonalityResult { rows, levels, summary })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseSummary {
    pub replicates: usize,
    pub baseline_mean_z: f64,
    pub baseline_std_z: f64,
    pub baseline_mean_target_rate: f64,
    pub hijacked_mean_z: f64,
    pub hijacked_mean_target_rate: f64,
    pub qrng_mean_z: f64,
    pub qrng_mean_target_rate: f64,
    pub qrng_mean_green_fraction: f64,
    /// Fraction of defended replicates with green fraction inside
    /// gamma +/- 4 binomial sigma.
    pub qrng_green_band_fraction: f64,
    /// Fraction of defended replicates with z inside the baseline
    /// mean +/- 2 std seed band.
    pub qrng_z_band_fraction: f64,
    /// Fraction satisfying both bands at once.
    pub qrng_joint_band_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseResult {
    pub rows: Vec<ExperimentRow>,
    pub summary: DefenseSummary,
}

/// Draw steering against the honest baseline and against a provider that
/// replaces the attacker's library with OS entropy. The defended arm keeps
/// the attack configured; the provider swap is what silences it.
pub fn qrng_defense(params: &ExperimentParams) -> Result<DefenseResult> {
    params.validate()?;
    let model = params.build_model()?;
    let targets = params.target_set();
    let gamma = params.watermark.gamma;

    let mut rows = Vec::new();
    let mut base_z = Vec::new();
    let mut base_rates = Vec::new();
    let mut baselines = Vec::with_capacity(params.replicates);
    for r in 0..params.replicates {
        let cfg = params.honest_config(&targets, params.replicate_seed(r));
        let rec = generate_with_model(&model, &cfg)?;
        base_z.push(rec.z(gamma)?);
        base_rates.push(rec.target_rate());
        baselines.push(rec);
    }
    for rec in &baselines {
        rows.push(ExperimentRow::from_record(COND_DEFENSE_BASELINE, rec, None, None));
    }
    let baseline_mean_z = mean(&base_z);
    let baseline_std_z = sample_std(&base_z);

    let mut hijacked_z = Vec::new();
    let mut hijacked_rates = Vec::new();
    for r in 0..params.replicates {
        let cfg = params.attack_pipeline(AttackMode::Steering, &targets, r);
        let rec = generate_with_model(&model, &cfg)?;
        let z = rec.z(gamma)?;
        let surv = crate::watermark::survival(z, base_z[r])?;
        hijacked_z.push(z);
        hijacked_rates.push(rec.target_rate());
        rows.push(ExperimentRow::from_record(COND_HIJACKED_STEERING, &rec, None, Some(surv)));
    }

    let green_band = 4.0 * (gamma * (1.0 - gamma) / params.n_tokens as f64).sqrt();
    let mut qrng_z = Vec::new();
    let mut qrng_rates = Vec::new();
    let mut qrng_fracs = Vec::new();
    let mut in_green = 0usize;
    let mut in_z = 0usize;
    let mut in_both = 0usize;
    for r in 0..params.replicates {
        let mut cfg = params.attack_pipeline(AttackMode::Steering, &targets, r);
        cfg.entropy_kind = SourceKind::Qrng;
        cfg.defense_scope = DefenseScope::FullProvider;
        let rec = generate_with_model(&model, &cfg)?;
        let z = rec.z(gamma)?;
        let frac = rec.green_fraction().unwrap();
        let surv = crate::watermark::survival(z, base_z[r])?;
        let green_ok = (frac - gamma).abs() <= green_band;
        let z_ok = (z - baseline_mean_z).abs() <= 2.0 * baseline_std_z;
        in_green += green_ok as usize;
        in_z += z_ok as usize;
        in_both += (green_ok && z_ok) as usize;
        qrng_z.push(z);
        qrng_rates.push(rec.target_rate());
        qrng_fracs.push(frac);
        rows.push(ExperimentRow::from_record(COND_QRNG_DEFENDED, &rec, None, Some(surv)));
    }

    let n = params.replicates as f64;
    let summary = DefenseSummary {
        replicates: params.replicates,
        baseline_mean_z,
        baseline_std_z,
        baseline_mean_target_rate: mean(&base_rates),
        hijacked_mean_z: mean(&hijacked_z),
        hijacked_mean_target_rate: mean(&hijacked_rates),
        qrng_mean_z: mean(&qrng_z),
        qrng_mean_target_rate: mean(&qrng_rates),
        qrng_mean_green_fraction: mean(&qrng_fracs),
        qrng_green_band_fraction: in_green as f64 / n,
        qrng_z_band_fraction: in_z as f64 / n,
        qrng_joint_band_fraction: in_both as f64 / n,
    };
    Ok(DefenseResult { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentParams {
        ExperimentParams {
            vocab_size: 64,
            n_tokens: 120,
            reference_size: 8,
            replicates: 3,
            sweep_replicates: 1,
            orthogonality_replicates: 2,
            target_count: 8,
            ..ExperimentParams::default()
        }
    }

    fn small_matrix() -> ExperimentParams {
        ExperimentParams { reference_size: MIN_MATRIX_REFERENCE, ..small() }
    }

    #[test]
    fn matrix_shape_and_determinism() {
        let params = small_matrix();
        let a = detection_matrix(&params).unwrap();
        assert_eq!(a.rows.len(), 4 * params.replicates);
        for cond in [COND_HOLDOUT, COND_AWARE, COND_BLIND, COND_TOKEN_EDIT] {
            assert_eq!(a.rows.iter().filter(|r| r.condition_id == cond).count(), params.replicates);
        }
        // holdouts carry no survival, attacked rows do
        assert!(a.rows.iter().filter(|r| r.condition_id == COND_HOLDOUT).all(|r| r.survival.is_none()));
        assert!(a.rows.iter().filter(|r| r.condition_id == COND_AWARE).all(|r| r.survival.is_some()));
        let b = detection_matrix(&params).unwrap();
        assert_eq!(rows_to_csv(&a.rows), rows_to_csv(&b.rows));
    }

    #[test]
    fn matrix_token_edit_rows_are_paired_replays() {
        let params = small_matrix();
        let m = detection_matrix(&params).unwrap();
        let holdout: Vec<&ExperimentRow> =
            m.rows.iter().filter(|r| r.condition_id == COND_HOLDOUT).collect();
        let edited: Vec<&ExperimentRow> =
            m.rows.iter().filter(|r| r.condition_id == COND_TOKEN_EDIT).collect();
        for (h, e) in holdout.iter().zip(&edited) {
            assert_eq!(h.seed, e.seed);
            assert_eq!(e.mode, "off");
        }
        // editing loses green tokens on average
        let mean_h: f64 = holdout.iter().map(|r| r.z.unwrap()).sum::<f64>() / holdout.len() as f64;
        let mean_e: f64 = edited.iter().map(|r| r.z.unwrap()).sum::<f64>() / edited.len() as f64;
        assert!(mean_e < mean_h, "edit z {mean_e} vs holdout {mean_h}");
    }

    #[test]
    fn csv_has_stable_header_and_width() {
        let params = small_matrix();
        let m = detection_matrix(&params).unwrap();
        let csv = rows_to_csv(&m.rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), ROW_HEADER);
        assert_eq!(ROW_HEADER.split(',').count(), 24);
        for line in lines {
            assert_eq!(line.split(',').count(), 24, "bad row: {line}");
        }
    }

    #[test]
    fn sweep_covers_the_grid_once_per_cell() {
        let params = small();
        let s = sweep(&params).unwrap();
        assert_eq!(s.cells.len(), 16);
        assert_eq!(s.rows.len(), 16 * params.sweep_replicates);
        let mut seen = std::collections::HashSet::new();
        for c in &s.cells {
            assert!(SWEEP_ACTIVATIONS.contains(&c.p_act));
            assert!(SWEEP_BOOSTS.contains(&c.b));
            assert!(seen.insert((c.p_act.to_bits(), c.b.to_bits())));
        }
        let csv = sweep_to_csv(&s);
        assert_eq!(csv.lines().next().unwrap(), SWEEP_HEADER);
        assert_eq!(csv.lines().count(), 17);
    }

    #[test]
    fn orthogonality_levels_and_summary() {
        let mut params = small();
        params.orthogonality_replicates = 4;
        let o = orthogonality(&params).unwrap();
        assert_eq!(o.levels.len(), 5);
        assert_eq!(o.rows.len(), 2 * 5 * params.orthogonality_replicates);
        // stronger watermarks produce larger baseline z; at this tiny size
        // only the endpoints are far enough apart to compare safely
        let zs: Vec<f64> = o.levels.iter().map(|l| l.mean_baseline_z).collect();
        assert!(zs[4] > zs[0] + 2.0, "baseline z not rising with delta: {zs:?}");
        assert!(o.summary.cv_target_rate >= 0.0);
        let csv = orthogonality_to_csv(&o);
        assert_eq!(csv.lines().next().unwrap(), ORTHOGONALITY_HEADER);
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn defense_summary_band_fractions_are_fractions() {
        let mut params = small();
        params.replicates = 4;
        let d = qrng_defense(&params).unwrap();
        assert_eq!(d.rows.len(), 3 * params.replicates);
        for f in [
            d.summary.qrng_green_band_fraction,
            d.summary.qrng_z_band_fraction,
            d.summary.qrng_joint_band_fraction,
        ] {
            assert!((0.0..=1.0).contains(&f));
        }
        assert!(d.summary.qrng_joint_band_fraction <= d.summary.qrng_z_band_fraction);
        assert!(d.summary.qrng_joint_band_fraction <= d.summary.qrng_green_band_fraction);
        // steering lifts the target rate well above natural
        assert!(d.summary.hijacked_mean_target_rate > d.summary.baseline_mean_target_rate);
    }

    #[test]
    fn params_validation_rejects_bad_shapes() {
        let mut p = small();
        p.reference_size = 4;
        assert!(p.validate().is_err());
        let mut p = small();
        p.n_tokens = 50;
        assert!(p.validate().is_err());
        let mut p = small();
        p.edit_rate = 1.5;
        assert!(p.validate().is_err());
        let mut p = small();
        p.targets = Some(vec![999]);
        assert!(p.validate().is_err());
        assert!(small().validate().is_ok());
        // the matrix needs a wider reference corpus than the other experiments
        assert!(detection_matrix(&small()).is_err());
    }

    #[test]
    fn explicit_targets_are_sorted_and_deduped() {
        let mut p = small();
        p.targets = Some(vec![9, 3, 9, 1]);
        assert_eq!(p.target_set(), vec![1, 3, 9]);
    }

    #[test]
    fn csv_field_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
