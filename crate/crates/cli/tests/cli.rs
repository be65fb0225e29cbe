//! Drives the `fedspzo` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn fedspzo(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedspzo"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_small(name: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = config(name);
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    fedspzo(&args, &[("FEDSPZO_ROUNDS", "3"), ("FEDSPZO_EVAL_EVERY", "1")])
}

#[test]
fn run_compare_and_inspect() {
    let root = tempfile::tempdir().unwrap();
    let spzo = root.path().join("spzo");
    let fwd = root.path().join("fwd");

    let out = run_small("blobs_fedspzo.toml", &spzo, &["--dump-payloads"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(spzo.join("metrics.jsonl").is_file());
    assert!(spzo.join("final.ckpt").is_file());
    assert!(spzo.join("config.toml").is_file());

    let again = run_small("blobs_fedspzo.toml", &spzo, &[]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("error"));
    assert!(run_small("blobs_fedspzo.toml", &spzo, &["--force", "--workers", "2", "--dump-payloads"]).status.success());

    assert!(run_small("blobs_forward_zo.toml", &fwd, &[]).status.success());
    let cmp = fedspzo(&["compare", fwd.to_str().unwrap(), spzo.to_str().unwrap(), "--acc-target", "0.3"], &[]);
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    assert!(stdout(&cmp).contains("forward_zo") || stdout(&cmp).contains("fedspzo"));
    let json = fedspzo(&["compare", fwd.to_str().unwrap(), spzo.to_str().unwrap(), "--json"], &[]);
    let parsed: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert!(parsed["rows"].as_array().is_some_and(|r| !r.is_empty()));

    let payload = std::fs::read_dir(spzo.join("payloads"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let inspect = fedspzo(&["inspect-payload", payload.to_str().unwrap(), "--hex"], &[]);
    assert!(inspect.status.success());
    let text = stdout(&inspect);
    assert!(text.contains("scalars-only"));
    assert!(text.contains("P1, P2       2, 8"));
    assert!(text.contains("00000000  46 53 50 42"));
}

#[test]
fn verify_passes_and_bad_configs_fail() {
    let cfg = config("blobs_fedspzo.toml");
    let out = fedspzo(&["verify", "--config", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("[PASS] reconstruction"));
    assert!(!text.contains("FAIL"));

    let bad = fedspzo(&["verify", "--config", cfg.to_str().unwrap()], &[("FEDSPZO_METHOD__P2", "7")]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("method.p2"));

    let missing = fedspzo(&["verify", "--config", "/nonexistent.toml"], &[]);
    assert!(!missing.status.success());
}
