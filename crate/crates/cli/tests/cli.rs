//! End-to-end runs of the compiled binary on a tiny synthetic config.

use std::path::Path;
use std::process::Command;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let config = serde_json::json!({
        "data": { "synthetic": {
            "n_assets": 2, "length": 140, "ar_coeff": 0.9,
            "signal_scale": 0.01, "noise_scale": 0.005, "seed": 11
        }},
        "env": { "state_lag": 5 },
        "net": { "hidden": [8, 8] },
        "algo": { "algorithm": "a2c", "steps_per_update": 32 },
        "methods": ["rp", "baseline"],
        "exp": { "seeds": 2, "total_steps": 64, "tune_steps": 32, "tune_samples": 1, "workers": 1 },
        "seed": 7
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn curlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_curlab"))
}

#[test]
fn evaluate_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");

    let status = curlab()
        .args(["evaluate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("method,mean,std,n,t_stat,p_value_pct\n"));
    assert!(csv.contains("\nrp,"));
    assert!(csv.contains("\na2c,"));
    assert!(out.join("results.json").exists());
    assert!(out.join("manifest.json").exists());
    assert!(out.join("equity_curve_rp.svg").exists());

    // report re-renders and prints the table
    let output = curlab()
        .args(["report", "--dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("method"));
    assert!(stdout.contains("rp"));
}

#[test]
fn process_synth_and_missing_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    let out = dir.path().join("synth");
    let status = curlab()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("series.json").exists());
    assert!(out.join("ground_truth.json").exists());

    // a config missing required keys fails and names them
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{}").unwrap();
    let output = curlab()
        .args(["evaluate", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("missing fields"), "{stderr}");
    assert!(stderr.contains("data"));
    assert!(stderr.contains("methods"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, seed) in [(&out_a, "7"), (&out_b, "8")] {
        let status = curlab()
            .args(["evaluate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read_to_string(out_a.join("results.csv")).unwrap();
    let b = std::fs::read_to_string(out_b.join("results.csv")).unwrap();
    assert_ne!(a, b);
}
