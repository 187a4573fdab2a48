use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use wmlab::config::FileConfig;
use wmlab::detect::run_suite;
use wmlab::error::{Error, Result};
use wmlab::experiment::{
    detection_matrix, orthogonality, orthogonality_to_csv, qrng_defense, reference_corpus,
    rows_to_csv, sweep, sweep_to_csv, ExperimentRow,
};
use wmlab::pipeline::{generate, SequenceRecord};
use wmlab::verify;

#[derive(Parser)]
#[command(
    name = "wmlab",
    version,
    about = "Sampler-level watermark attack laboratory",
    subcommand_required = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML config overlaying the built-in defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Write output here instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides run_seed (generate) or base_seed (experiments)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one generation and emit its full trace
    Generate,
    /// Score a recorded sequence with the detector suite
    Detect {
        /// Sequence record JSON, as written by generate --format json
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Attack conditions vs holdouts under the full detector suite
    Matrix,
    /// Activation-by-boost grid for the blind attack
    Sweep,
    /// Delivered target rate across watermark strengths
    Orthogonality,
    /// Draw steering against a hardware-entropy provider swap
    Defend,
    /// Deterministic oracle checks; nonzero exit on any failure
    Selftest,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::from_path(p),
        None => Ok(FileConfig::default()),
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, content)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            if !content.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))
}

fn one_row_csv(row: &ExperimentRow) -> String {
    rows_to_csv(std::slice::from_ref(row))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let file = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate => {
            let mut cfg = file.pipeline()?;
            if let Some(seed) = cli.seed {
                cfg.run_seed = seed;
            }
            let rec = generate(&cfg)?;
            let content = match cli.format {
                Format::Json => to_json(&rec)?,
                Format::Csv => one_row_csv(&ExperimentRow::from_record("generate", &rec, None, None)),
            };
            emit(cli.out.as_deref(), &content)?;
        }
        Command::Detect { input } => {
            let text = std::fs::read_to_string(input)?;
            let rec: SequenceRecord =
                serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
            let mut params = file.params()?;
            params.model_seed = rec.config.model_seed;
            params.vocab_size = rec.config.vocab_size;
            params.n_tokens = rec.config.n_tokens;
            if let Some(w) = rec.config.watermark {
                params.watermark = w;
            }
            if let Some(seed) = cli.seed {
                params.base_seed = seed;
            }
            let model = params.build_model()?;
            let reference = reference_corpus(&model, &params, &params.target_set())?;
            let baseline_z = reference.z_mean.is_finite().then_some(reference.z_mean);
            let report = run_suite(&rec, &reference, baseline_z)?;
            let content = match cli.format {
                Format::Json => to_json(&report)?,
                Format::Csv => {
                    one_row_csv(&ExperimentRow::from_record("detect", &rec, Some(&report), report.survival))
                }
            };
            emit(cli.out.as_deref(), &content)?;
        }
        Command::Matrix => {
            let mut params = file.params()?;
            if let Some(seed) = cli.seed {
                params.base_seed = seed;
            }
            let result = detection_matrix(&params)?;
            for c in &result.conditions {
                eprintln!(
                    "{:<12} n={:<3} mean_z={:8.3} survival={} target_rate={:.4} clean={:.0}%",
                    c.condition_id,
                    c.replicates,
                    c.mean_z,
                    c.mean_survival.map_or("-".into(), |s| format!("{s:.4}")),
                    c.mean_target_rate,
                    100.0 * c.clean_fraction
                );
            }
            let content = match cli.format {
                Format::Json => to_json(&result)?,
                Format::Csv => rows_to_csv(&result.rows),
            };
            emit(cli.out.as_deref(), &content)?;
        }
        Command::Sweep => {
            let mut params = file.params()?;
            if let Some(seed) = cli.seed {
                params.base_seed = seed;
            }
            let result = sweep(&params)?;
            let content = match cli.format {
                Format::Json => to_json(&result)?,
                Format::Csv => sweep_to_csv(&result),
            };
            emit(cli.out.as_deref(), &content)?;
        }
        Command::Orthogonality => {
            let mut params = file.params()?;
            if let Some(seed) = cli.seed {
                params.base_seed = seed;
            }
            let result = orthogonality(&params)?;
            eprintln!(
                "pearson_r={} p_value={} cv_target_rate={:.4}",
                result.summary.pearson_r.map_or("-".into(), |r| format!("{r:.4}")),
                result.summary.p_value.map_or("-".into(), |p| format!("{p:.4}")),
                result.summary.cv_target_rate
            );
            let content = match cli.format {
                Format::Json => to_json(&result)?,
                Format::Csv => orthogonality_to_csv(&result),
            };
            emit(cli.out.as_deref(), &content)?;
        }
        Command::Defend => {
            let mut params = file.params()?;
            if let Some(seed) = cli.seed {
                params.base_seed = seed;
            }
            let result = qrng_defense(&params)?;
            let s = &result.summary;
            eprintln!(
                "baseline z={:.3}+/-{:.3} rate={:.4} | hijacked z={:.3} rate={:.4} | defended z={:.3} rate={:.4} bands green={:.0}% z={:.0}% joint={:.0}%",
                s.baseline_mean_z,
                s.baseline_std_z,
                s.baseline_mean_target_rate,
                s.hijacked_mean_z,
                s.hijacked_mean_target_rate,
                s.qrng_mean_z,
                s.qrng_mean_target_rate,
                100.0 * s.qrng_green_band_fraction,
                100.0 * s.qrng_z_band_fraction,
                100.0 * s.qrng_joint_band_fraction
            );
            let content = match cli.format {
                Format::Json => to_json(&result)?,
                Format::Csv => rows_to_csv(&result.rows),
            };
            emit(cli.out.as_deref(), &content)?;
        }
        Command::Selftest => {
            let reports = verify::run_all();
            let mut failed = 0;
            for r in &reports {
                let tag = if r.passed { "ok" } else { "FAIL" };
                println!("[{tag}] {}: {}", r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                println!("{failed} of {} checks failed", reports.len());
                return Ok(ExitCode::FAILURE);
            }
            println!("all {} checks passed", reports.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
