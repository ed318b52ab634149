//! End-to-end CLI tests on synthetic data: every subcommand, determinism,
//! the disabled-constraints equivalence, and error handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nncompress")
}

fn config_json(output_dir: &Path, arch: &str) -> serde_json::Value {
    serde_json::json!({
        "architecture": arch,
        "dataset": {"kind": "synthetic", "seed": 3, "count": 60, "height": 6, "width": 6, "classes": 3},
        "seed": 11,
        "train": {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 10, "epochs": 3, "seed": 11},
        "output_dir": output_dir,
        "compression": {
            "schedule": {"initial_rho": 0.0015, "growth": 1.9, "max_iterations": 4, "stop_rel_residual": 0.01},
            "epochs_per_iteration": 1,
            "retrain_epochs": 2,
            "nonstructured_round1": [300, 30],
            "nonstructured_round2": [150, 24],
            "column_budgets": [24, null],
            "filter_budgets": [null, null],
            "quantization": {"bits": 3, "skip_layers": []}
        },
        "comparison": {"accuracy_band": 0.2, "quant_bits": 4, "backoff_retries": 2}
    })
}

fn write_config(dir: &Path, value: &serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_compress_analyze_flow() {
    let work = tempfile::tempdir().unwrap();
    let run_dir = work.path().join("run");
    let cfg = write_config(work.path(), &config_json(&run_dir, "toy-mlp"));

    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_ok(&out);
    assert!(run_dir.join("baseline.json").exists());
    assert!(run_dir.join("train_log.csv").exists());
    assert!(run_dir.join("config.json").exists());
    let log = std::fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "one csv line per epoch: {log}");

    let out = run(&["compress", "--config", cfg.to_str().unwrap(), "--regime", "ns"]);
    assert_ok(&out);
    let compressed = run_dir.join("compressed_ns.json");
    assert!(compressed.exists());
    let verification: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("verification_ns.json")).unwrap())
            .unwrap();
    assert_eq!(verification["feasible"], serde_json::json!(true));
    assert!(run_dir.join("admm_run_ns/round1/manifest.json").exists());
    assert!(run_dir.join("admm_run_ns/round2/manifest.json").exists());

    let out = run(&[
        "analyze",
        "--checkpoint",
        compressed.to_str().unwrap(),
        "--bits",
        "3",
        "--scheme",
        "rel",
        "--json",
    ]);
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["quant_bits"], serde_json::json!(3));
    assert!(report["weight_count"].as_u64().unwrap() <= 150 + 24);

    // Structured + quant regimes complete and verify.
    let out = run(&["compress", "--config", cfg.to_str().unwrap(), "--regime", "struct"]);
    assert_ok(&out);
    assert!(run_dir.join("compressed_struct.json").exists());
    let out = run(&["compress", "--config", cfg.to_str().unwrap(), "--regime", "quant"]);
    assert_ok(&out);
    assert!(run_dir.join("compressed_quant.json").exists());
}

#[test]
fn untouched_model_reports_unit_compression() {
    let work = tempfile::tempdir().unwrap();
    let ckpt = work.path().join("dense.json");
    nncompress::model::toy_mlp(3).save(&ckpt).unwrap();
    let out = run(&[
        "analyze",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--bits",
        "32",
        "--scheme",
        "rel",
        "--structured",
        "--json",
    ]);
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["compression_rate"], serde_json::json!(1.0));
}

#[test]
fn compress_without_budgets_matches_train_bit_for_bit() {
    let work = tempfile::tempdir().unwrap();
    let run_dir = work.path().join("run");
    let mut value = config_json(&run_dir, "toy-mlp");
    value["compression"]["nonstructured_round1"] = serde_json::Value::Null;
    value["compression"]["nonstructured_round2"] = serde_json::Value::Null;
    let cfg = write_config(work.path(), &value);

    assert_ok(&run(&["train", "--config", cfg.to_str().unwrap()]));
    assert_ok(&run(&["compress", "--config", cfg.to_str().unwrap(), "--regime", "ns"]));
    let baseline = std::fs::read(run_dir.join("baseline.json")).unwrap();
    let compressed = std::fs::read(run_dir.join("compressed_ns.json")).unwrap();
    assert_eq!(baseline, compressed, "disabled constraints must reproduce training bit-for-bit");
}

#[test]
fn analyze_standalone_matrix() {
    let work = tempfile::tempdir().unwrap();
    let path = work.path().join("matrix.json");
    let mut values = vec![0.0; 64];
    values[3] = 1.5;
    values[40] = -2.0;
    std::fs::write(
        &path,
        serde_json::to_string(&serde_json::json!({"rows": 8, "cols": 8, "values": values})).unwrap(),
    )
    .unwrap();
    let out = run(&["analyze", "--matrix", path.to_str().unwrap(), "--bits", "5", "--scheme", "abs", "--json"]);
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["weight_count"], serde_json::json!(2));
    assert!(report["weight_index_absolute_bytes"].as_f64().unwrap() > 0.0);
}

#[test]
fn tables_render_and_check() {
    let out = run(&["tables", "--check"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("0.26MB"), "{stdout}");
    assert!(stdout.contains("102KB"));
    assert!(!stdout.contains("FAIL"));

    let work = tempfile::tempdir().unwrap();
    let csv = work.path().join("tables.csv");
    assert_ok(&run(&["tables", "--csv", csv.to_str().unwrap()]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("family,method,regime"));
}

#[test]
fn compare_runs_both_pipelines_on_a_toy_model() {
    let work = tempfile::tempdir().unwrap();
    let run_dir = work.path().join("run");
    let cfg = write_config(work.path(), &config_json(&run_dir, "toy-mlp"));
    assert_ok(&run(&["train", "--config", cfg.to_str().unwrap()]));
    let out = run(&["compare", "--config", cfg.to_str().unwrap()]);
    let code = out.status.code().unwrap_or(-1);
    assert!(
        [0, 10, 11].contains(&code),
        "verdict exit code {code}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("comparison_report.json")).unwrap())
            .unwrap();
    assert!(report["rate_ratio"].as_f64().unwrap() > 0.0);
    assert!(run_dir.join("compare_ns.json").exists());
    assert!(run_dir.join("compare_struct.json").exists());
}

#[test]
fn invalid_config_fails_without_partial_outputs() {
    let work = tempfile::tempdir().unwrap();
    let run_dir = work.path().join("run");
    let mut value = config_json(&run_dir, "toy-mlp");
    value["train"]["learning_rate"] = serde_json::json!(-3.0);
    let cfg = write_config(work.path(), &value);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning rate"), "{stderr}");
    assert!(!run_dir.exists(), "failed run must not leave partial outputs");

    // Unknown architecture is named too.
    let mut value = config_json(&run_dir, "toy-mlp");
    value["architecture"] = serde_json::json!("alexnet-9000");
    let cfg = write_config(work.path(), &value);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown architecture"));
}

#[test]
fn seed_flag_changes_the_run_deterministically() {
    let work = tempfile::tempdir().unwrap();
    let run_a = work.path().join("a");
    let run_b = work.path().join("b");
    let run_c = work.path().join("c");
    for (dir, seed) in [(&run_a, "5"), (&run_b, "5"), (&run_c, "6")] {
        let cfg = write_config(work.path(), &config_json(dir, "toy-mlp"));
        assert_ok(&run(&["train", "--config", cfg.to_str().unwrap(), "--seed", seed]));
    }
    let a = std::fs::read(run_a.join("baseline.json")).unwrap();
    let b = std::fs::read(run_b.join("baseline.json")).unwrap();
    let c = std::fs::read(run_c.join("baseline.json")).unwrap();
    assert_eq!(a, b, "same seed, same bytes");
    assert_ne!(a, c, "different seed, different weights");
}
