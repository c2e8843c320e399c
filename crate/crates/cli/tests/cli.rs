use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparse-hw"));
    c.env_remove("SPARSE_HW_THREADS");
    c
}

fn write_config(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| l.split(',').map(|x| x.trim().parse::<f64>().ok()).collect::<Option<Vec<_>>>())
        .collect()
}

fn hw_config(matrix: Value, alpha: f64, n: usize) -> Value {
    json!({
        "seed": 1,
        "matrix": matrix,
        "distribution": {"kind": "weibull", "alpha": alpha},
        "p": 0.5,
        "t_grid": {"start": 0.5, "stop": 50.0, "points": 20, "spacing": "geometric"},
        "n_samples": n
    })
}

#[test]
fn hw_verify_writes_report_with_echo_and_hash() {
    let dir = TempDir::new().unwrap();
    let mut v = hw_config(json!({"kind": "exchange"}), 1.0, 20_000);
    v["p"] = json!(1.0);
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = dir.path().join("out");
    let o = run("hw-verify", &cfg, &out, &["--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["command"], "hw-verify");
    assert_eq!(r["config"]["seed"], 1);
    // defaults are filled into the echo
    assert_eq!(r["config"]["center"], true);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(r["outcome"], "pass");
    assert!(out.join("tail.csv").exists());
}

#[test]
fn zero_matrix_is_degenerate_not_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &hw_config(json!({"kind": "zero", "rows": 3, "cols": 3}), 1.0, 100));
    let out = dir.path().join("out");
    let o = run("hw-verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(&out)["outcome"], "degenerate instance");
}

#[test]
fn bad_alpha_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &hw_config(json!({"kind": "exchange"}), 3.0, 100));
    let o = run("hw-verify", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_seed_and_unknown_fields_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let mut v = hw_config(json!({"kind": "exchange"}), 1.0, 2000);
    v["p"] = json!(1.0);
    v.as_object_mut().unwrap().remove("seed");
    let cfg = write_config(dir.path(), "noseed.json", &v);
    assert_eq!(run("hw-verify", &cfg, &dir.path().join("a"), &[]).status.code(), Some(2));
    // --seed fills it in
    let o = run("hw-verify", &cfg, &dir.path().join("b"), &["--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&dir.path().join("b"))["config"]["seed"], 9);

    let mut v = hw_config(json!({"kind": "exchange"}), 1.0, 100);
    v["n_sampels"] = json!(5);
    let cfg = write_config(dir.path(), "typo.json", &v);
    assert_eq!(run("hw-verify", &cfg, &dir.path().join("c"), &[]).status.code(), Some(2));
}

#[test]
fn oversized_run_is_budget_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &hw_config(json!({"kind": "identity", "n": 1000}), 1.0, 1_000_000_000),
    );
    let o = run("hw-verify", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_verdict_exits_one() {
    let dir = TempDir::new().unwrap();
    let mut v = hw_config(json!({"kind": "exchange"}), 1.0, 20_000);
    // the W(1) exchange tail has slope near 1/2, nowhere near 3
    v["slope"] = json!({"expected": 3.0, "tolerance": 0.1});
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = dir.path().join("out");
    assert_eq!(run("hw-verify", &cfg, &out, &[]).status.code(), Some(1));
    assert_eq!(report(&out)["outcome"], "fail");
}

#[test]
fn norms_of_identity() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("i2.csv");
    std::fs::write(&m, "1,0\n0,1\n").unwrap();
    let o = bin().arg("norms").arg("--matrix").arg(&m).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    let n = &r["numerics"]["norms"];
    assert!((n["frobenius"]["value"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert!((n["spectral"]["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((n["max_abs"]["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let text = String::from_utf8_lossy(&o.stderr);
    assert!(text.contains("frobenius\t"));
}

#[test]
fn full_rip_matches_spectral_norm_of_deviation() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "rip.json",
        &json!({
            "seed": 5, "b": {"kind": "gaussian", "rows": 4, "cols": 3},
            "distribution": {"kind": "weibull", "alpha": 1.0}, "p": 0.6, "n": 100, "k": 4
        }),
    );
    let out = dir.path().join("rip");
    assert_eq!(run("rip", &cfg, &out, &[]).status.code(), Some(0));
    let rip = report(&out)["numerics"]["rip"]["value"].as_f64().unwrap();
    let o = bin().arg("norms").arg("--matrix").arg(out.join("deviation.csv")).output().unwrap();
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    let spectral = r["numerics"]["norms"]["spectral"]["value"].as_f64().unwrap();
    assert!((rip - spectral).abs() <= 1e-10 * spectral.max(1.0), "{rip} vs {spectral}");
}

#[test]
fn rip_reads_written_samples() {
    let dir = TempDir::new().unwrap();
    let cov = write_config(
        dir.path(),
        "cov.json",
        &json!({
            "seed": 4, "b": {"kind": "gaussian", "rows": 3, "cols": 2},
            "distribution": {"kind": "weibull", "alpha": 1.0}, "p": [0.5, 0.7, 1.0], "n": 80, "write_samples": true
        }),
    );
    let out = dir.path().join("cov");
    assert_eq!(run("covest", &cov, &out, &[]).status.code(), Some(0));
    let rip = write_config(&out, "rip.json", &json!({"seed": 4, "samples": "samples.json", "k": 2}));
    let rout = dir.path().join("rip");
    let o = run("rip", &rip, &rout, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&rout)["numerics"]["n"], 80);
}

#[test]
fn sketch_sweep_median_nonincreasing() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "sk.json",
        &json!({
            "seed": 6,
            "matrix": {"kind": "low_rank", "rows": 24, "cols": 24, "singular_values": (0..16).map(|i| 1.0 + i as f64 / 15.0).collect::<Vec<_>>()},
            "p": 0.5, "r": 4, "r_grid": [2, 4, 8, 16], "seeds": 30
        }),
    );
    let out = dir.path().join("out");
    let o = run("sketch", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let verdicts = r["verdicts"].as_array().unwrap();
    assert!(verdicts.iter().any(|v| v["invariant"] == "median_nonincreasing" && v["passed"] == true));
    // the factors reproduce a rank-r matrix of the right shape
    let left = read_csv(&out.join("y_left.csv"));
    let right = read_csv(&out.join("y_right.csv"));
    assert_eq!(left.len(), 24);
    assert_eq!(right.len(), 24);
    assert_eq!(left[0].len(), right[0].len());
}

#[test]
fn bernstein_full_retention_reduces_bitwise() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.json",
        &json!({
            "seed": 2, "a": [1.0, -2.0, 0.5, 3.0],
            "distribution": {"kind": "weibull", "alpha": 1.0}, "p": 1.0,
            "t_grid": {"start": 0.5, "stop": 20.0, "points": 12, "spacing": "geometric"}, "n_samples": 20000
        }),
    );
    let out = dir.path().join("out");
    run("bernstein-verify", &cfg, &out, &[]);
    let r = report(&out);
    let v = r["verdicts"].as_array().unwrap().iter().find(|v| v["invariant"] == "full_retention_reduction").cloned();
    assert_eq!(v.expect("reduction verdict present")["passed"], true);
}

#[test]
fn thread_count_does_not_change_numerics() {
    let dir = TempDir::new().unwrap();
    let matrix = json!({"kind": "symmetric", "n": 6, "diagonal_free": true});
    let cfg = write_config(dir.path(), "c.json", &hw_config(matrix, 1.0, 50_000));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run("hw-verify", &cfg, &a, &["--threads", "1"]).status.code().map(|c| c <= 1), Some(true));
    let o = bin()
        .arg("hw-verify")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .env("SPARSE_HW_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.code().unwrap() <= 1);
    let (ra, rb) = (report(&a), report(&b));
    assert_eq!(rb["threads"], 3);
    assert_eq!(serde_json::to_string(&ra["numerics"]).unwrap(), serde_json::to_string(&rb["numerics"]).unwrap());
    assert_eq!(ra["config_hash"], rb["config_hash"]);
}

#[test]
fn bad_thread_env_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", &hw_config(json!({"kind": "exchange"}), 1.0, 100));
    let o = bin()
        .arg("hw-verify")
        .arg("--config")
        .arg(&cfg)
        .env("SPARSE_HW_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
