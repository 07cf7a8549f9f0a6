//! Exercises the installed binary end to end on a reduced configuration:
//! stagewise flow, seed overrides, and the stable exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_riskroute");

const TINY_CONFIG: &str = r#"
seed = 11

[dataset]
n_queries = 600
embedding_dim = 8

[teacher]
hidden = 16
epochs = 2
batch_size = 128

[gate]
hidden = 16
epochs = 2
batch_size = 128

[calibration]
n_lambda = 4
alphas = [0.05, 0.2]

[sweep]
alphas = [0.05]
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn setup(dir: &Path) -> String {
    let config = dir.join("tiny.toml");
    fs::write(&config, TINY_CONFIG).unwrap();
    config.display().to_string()
}

#[test]
fn full_run_exits_zero_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("run");
    let res = run(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{res:?}");
    for name in [
        "dataset.csv",
        "teacher.ckpt",
        "gate.ckpt",
        "thresholds.txt",
        "sweep.csv",
        "envelope.csv",
        "risk.csv",
        "summary.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
}

#[test]
fn stagewise_flow_reproduces_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let full = dir.path().join("full");
    let staged = dir.path().join("staged");
    assert_eq!(
        run(&["run", "--config", &config, "--out", full.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    for sub in ["gen-data", "train-teacher", "train-gate", "calibrate", "sweep"] {
        let res = run(&[sub, "--config", &config, "--out", staged.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{sub}: {res:?}");
    }
    for name in ["dataset.csv", "teacher.ckpt", "gate.ckpt", "thresholds.txt", "sweep.csv"] {
        assert_eq!(
            fs::read(full.join(name)).unwrap(),
            fs::read(staged.join(name)).unwrap(),
            "{name} differs between staged and full runs"
        );
    }
}

#[test]
fn seed_override_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, extra) in [(&a, None), (&b, Some("12")), (&c, Some("11"))] {
        let mut args = vec!["gen-data", "--config", &config, "--out", out.to_str().unwrap()];
        if let Some(seed) = extra {
            args.extend(["--seed", seed]);
        }
        assert_eq!(run(&args).status.code(), Some(0));
    }
    let base = fs::read(a.join("dataset.csv")).unwrap();
    assert_ne!(base, fs::read(b.join("dataset.csv")).unwrap());
    assert_eq!(base, fs::read(c.join("dataset.csv")).unwrap());
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[calibration]\nlambda_min = -1.0\n").unwrap();
    let out = dir.path().join("run");
    let res = run(&[
        "gen-data",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2), "{res:?}");

    fs::write(&config, "this is not toml [").unwrap();
    let res = run(&["gen-data", "--config", config.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2), "{res:?}");
}

#[test]
fn missing_upstream_artifact_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("empty");
    let res = run(&[
        "train-teacher",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3), "{res:?}");
}

#[test]
fn tampered_checkpoint_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap().to_string();
    for sub in ["gen-data", "train-teacher"] {
        assert_eq!(run(&[sub, "--config", &config, "--out", &out_s]).status.code(), Some(0));
    }
    let ckpt = out.join("teacher.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&ckpt, bytes).unwrap();
    let res = run(&["train-gate", "--config", &config, "--out", &out_s]);
    assert_eq!(res.status.code(), Some(4), "{res:?}");
}

#[test]
fn malformed_checkpoint_exits_five() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap().to_string();
    for sub in ["gen-data", "train-teacher"] {
        assert_eq!(run(&[sub, "--config", &config, "--out", &out_s]).status.code(), Some(0));
    }
    // Without the sidecar the loader sees the corrupt magic itself rather
    // than a provenance hash mismatch.
    fs::remove_file(out.join("teacher.meta.json")).unwrap();
    let mut bytes = fs::read(out.join("teacher.ckpt")).unwrap();
    bytes[0] ^= 0xff;
    fs::write(out.join("teacher.ckpt"), bytes).unwrap();
    let res = run(&["train-gate", "--config", &config, "--out", &out_s]);
    assert_eq!(res.status.code(), Some(5), "{res:?}");
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["run", "--help"]).status.code(), Some(0));
}
