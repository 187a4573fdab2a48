//! End-to-end checks of the `wmlab` binary: exit codes, output shapes,
//! and determinism of the emitted files.

use std::path::PathBuf;
use std::process::{Command, Output};

use wmlab::experiment::{ROW_HEADER, SWEEP_HEADER};
use wmlab::pipeline::SequenceRecord;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wmlab"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wmlab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_config(name: &str, body: &str) -> PathBuf {
    let path = scratch(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {:?}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn selftest_passes() {
    let out = run_ok(bin().arg("selftest"));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("checks passed"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn generate_is_seed_deterministic() {
    let cfg = write_config("gen.toml", "n_tokens = 200\nscheme = \"kgw\"\n");
    let a = scratch("gen-a.json");
    let b = scratch("gen-b.json");
    let c = scratch("gen-c.json");
    for (path, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        run_ok(bin().args([
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--format",
            "json",
            "--seed",
            seed,
            "--out",
            path.to_str().unwrap(),
        ]));
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap(), "same seed must be byte-identical");
    assert_ne!(bytes_a, std::fs::read(&c).unwrap(), "different seed must differ");

    let rec: SequenceRecord = serde_json::from_slice(&bytes_a).unwrap();
    assert_eq!(rec.tokens.len(), 200);
    assert!(rec.tokens.iter().all(|&t| t < 512));
    let green = rec.green.expect("kgw run must carry green flags");
    assert_eq!(green.len(), 200);
}

#[test]
fn detect_emits_one_scored_row() {
    let cfg = write_config(
        "detect.toml",
        "n_tokens = 300\nscheme = \"kgw\"\nreference_size = 8\n",
    );
    let rec = scratch("detect-rec.json");
    run_ok(bin().args([
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
        "--seed",
        "5",
        "--out",
        rec.to_str().unwrap(),
    ]));
    let out = scratch("detect-row.csv");
    run_ok(bin().args([
        "detect",
        "--input",
        rec.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert_eq!(lines[0], ROW_HEADER);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 24);
    assert_eq!(fields[0], "detect");
    // all six detector stats and the trigger count are populated
    for f in &fields[17..24] {
        assert!(!f.is_empty(), "{csv}");
    }
}

#[test]
fn matrix_csv_has_paired_rows() {
    let cfg = write_config(
        "matrix.toml",
        "n_tokens = 150\nreference_size = 16\nreplicates = 2\n",
    );
    let out = scratch("matrix.csv");
    run_ok(bin().args([
        "matrix",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ROW_HEADER);
    // four conditions x two replicates
    assert_eq!(lines.len(), 1 + 8, "{csv}");
    for cond in ["holdout", "aware", "blind", "token_edit"] {
        assert_eq!(
            lines.iter().filter(|l| l.starts_with(&format!("{cond},"))).count(),
            2,
            "{csv}"
        );
    }
}

#[test]
fn sweep_csv_covers_the_grid() {
    let cfg = write_config("sweep.toml", "n_tokens = 150\nsweep_replicates = 1\n");
    let out = scratch("sweep.csv");
    run_ok(bin().args([
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 1 + 16, "{csv}");
}

#[test]
fn invalid_config_exits_two_with_error_line() {
    let cfg = write_config("bad.toml", "gamma = 1.5\nscheme = \"kgw\"\n");
    let out = bin()
        .args(["generate", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "{stderr}");
}

#[test]
fn missing_config_file_exits_two() {
    let out = bin()
        .args(["generate", "--config", "/nonexistent/wmlab.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error:"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bin().arg("explode").output().unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}
