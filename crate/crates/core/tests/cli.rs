use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn drsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drsc"))
        .args(args)
        .current_dir(dir)
        .env_remove("DRSC_THREADS")
        .output()
        .expect("binary runs")
}

fn lemma5_config(extra: &str) -> String {
    format!(
        r#"{{
            "model": {{"kind": "lemma5"}},
            "discount": 0.9,
            "ambiguity": {{"family": "wasserstein", "delta": 0.09}},
            "state_grid": [11],
            "noise": {{"kind": "exact", "atoms": [0, 1], "weights": [0.5, 0.5]}},
            "solver": {{"tol": 1e-6, "candidates": 201{extra}}}
        }}"#
    )
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(s.trim_end().lines().count(), 1, "stderr should be one line: {s}");
    s
}

#[test]
fn solve_writes_value_and_policy() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.json", &lemma5_config(""));
    let out = drsc(dir.path(), &["solve", "--config", "cfg.json", "--out-value", "v.csv", "--out-policy", "p.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = fs::read_to_string(dir.path().join("v.csv")).unwrap();
    assert!(v.starts_with("# config_digest "));
    assert_eq!(v.lines().nth(1), Some("x0,value"));
    assert_eq!(v.lines().count(), 2 + 11);
    let p = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(p.starts_with("# config_digest "));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["converged"], true);
    // Closed form: V(x) = x + alpha/(1-alpha) * (p0 - sqrt(p0 delta)).
    let (alpha, p0, delta): (f64, f64, f64) = (0.9, 0.5, 0.09);
    let c = alpha / (1.0 - alpha) * (p0 - (p0 * delta).sqrt());
    for line in v.lines().skip(2) {
        let mut it = line.split(',').map(|s| s.parse::<f64>().unwrap());
        let (x, val) = (it.next().unwrap(), it.next().unwrap());
        assert!((val - (x + c)).abs() < 1e-4, "x {x}: {val} vs {}", x + c);
    }
}

#[test]
fn solve_reports_non_convergence_with_exit_3() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.json", &lemma5_config(r#", "max_iters": 2"#));
    let out = drsc(dir.path(), &["solve", "--config", "cfg.json", "--out-report", "r.json"]);
    assert_eq!(out.status.code(), Some(3));
    stderr_line(&out);
    assert!(dir.path().join("value.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations"], 2);
}

#[test]
fn dro_eval_matches_two_point_closed_form() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "c.csv", "0\n1\n");
    let out = drsc(
        dir.path(),
        &["dro-eval", "--center", "c.csv", "--g", "identity", "--family", "wasserstein", "--delta", "0.09"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<f64> = line.trim().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(fields.len(), 3);
    let expected = 0.5 - (0.5f64 * 0.09).sqrt();
    assert!((fields[0] - expected).abs() < 5e-4, "{} vs {expected}", fields[0]);
    assert!(fields[2] >= -1e-9 && fields[2] < 1e-6);
}

#[test]
fn dro_eval_table_and_fk() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "c.csv", "0\n1\n1\n");
    write(dir.path(), "g.csv", "0,0\n0.5,0.25\n1,1\n");
    let out =
        drsc(dir.path(), &["dro-eval", "--center", "c.csv", "--g", "g.csv", "--family", "wasserstein", "--delta", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: f64 = String::from_utf8(out.stdout).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((v - 2.0 / 3.0).abs() < 1e-9);
    let out = drsc(
        dir.path(),
        &["dro-eval", "--center", "c.csv", "--g", "w_0", "--family", "fk", "--delta", "0.1", "--k", "2"],
    );
    assert_eq!(out.status.code(), Some(0));
    let v: f64 = String::from_utf8(out.stdout).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(v < 2.0 / 3.0 && v > 0.0);
    let out =
        drsc(dir.path(), &["dro-eval", "--center", "c.csv", "--g", "identity", "--family", "fk", "--delta", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    stderr_line(&out);
    let out =
        drsc(dir.path(), &["dro-eval", "--center", "c.csv", "--g", "x_0", "--family", "wasserstein", "--delta", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "good.json", &lemma5_config(""));
    let out = drsc(dir.path(), &["validate", "--config", "good.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("config_digest"));

    write(
        dir.path(),
        "nonoise.json",
        r#"{"model": {"kind": "lemma5"}, "discount": 0.9, "ambiguity": {"family": "wasserstein", "delta": 0.1}}"#,
    );
    let out = drsc(dir.path(), &["validate", "--config", "nonoise.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("at noise"));

    let bad_k = lemma5_config("")
        .replace(r#"{"family": "wasserstein", "delta": 0.09}"#, r#"{"family": "fk", "delta": 0.1, "k": 0.5}"#);
    write(dir.path(), "badk.json", &bad_k);
    let out = drsc(dir.path(), &["validate", "--config", "badk.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("ambiguity.k"));

    write(dir.path(), "syntax.json", "{");
    assert_eq!(drsc(dir.path(), &["validate", "--config", "syntax.json"]).status.code(), Some(2));
    assert_eq!(drsc(dir.path(), &["validate", "--config", "missing.json"]).status.code(), Some(2));
    assert_eq!(drsc(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn rate_sweep_writes_report_pair() {
    let dir = TempDir::new().unwrap();
    let cfg = lemma5_config("").replace(r#""state_grid": [11]"#, r#""state_grid": [5]"#);
    write(dir.path(), "cfg.json", &cfg);
    let out = drsc(
        dir.path(),
        &["rate-sweep", "--config", "cfg.json", "--n", "16,32,64", "--trials", "3", "--seed", "1", "--out", "report"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("# config_digest "));
    assert_eq!(csv.lines().nth(1), Some("n,trial,sup_error"));
    assert_eq!(csv.lines().count(), 2 + 9);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for key in ["slope", "intercept", "stderr", "warnings", "config_digest"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert!(summary["slope"].is_f64());

    let again = drsc(
        dir.path(),
        &[
            "--threads",
            "1",
            "rate-sweep",
            "--config",
            "cfg.json",
            "--n",
            "16,32,64",
            "--trials",
            "3",
            "--seed",
            "1",
            "--out",
            "again",
        ],
    );
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(csv, fs::read_to_string(dir.path().join("again.csv")).unwrap());

    let out = drsc(dir.path(), &["rate-sweep", "--config", "cfg.json", "--n", "32,16", "--trials", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.json", &lemma5_config(""));
    let base =
        ["simulate", "--config", "cfg.json", "--x0", "0.3", "--horizon", "20", "--trajectories", "16", "--seed", "9"];
    let mut one: Vec<&str> = vec!["--threads", "1"];
    one.extend(base);
    one.extend(["--out", "a.csv", "--summary", "a.json"]);
    let out = drsc(dir.path(), &one);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut four: Vec<&str> = vec!["--threads", "4"];
    four.extend(base);
    four.extend(["--out", "b.csv", "--summary", "b.json"]);
    assert_eq!(drsc(dir.path(), &four).status.code(), Some(0));
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.csv")).unwrap());
    assert_eq!(a.lines().nth(1), Some("trajectory,t,x0,action,w0,reward"));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(s["n_traj"], 16);
    assert!(s["mean"].is_f64() && s["stderr"].is_f64());

    let mut wc: Vec<&str> = base.to_vec();
    wc.extend(["--noise", "worst-case", "--out", "w.csv", "--summary", "w.json"]);
    assert_eq!(drsc(dir.path(), &wc).status.code(), Some(0));
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("w.json")).unwrap()).unwrap();
    assert!(w["mean"].as_f64().unwrap() < s["mean"].as_f64().unwrap());
}

#[test]
fn threads_env_overrides_flag() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.json", &lemma5_config(""));
    let out = Command::new(env!("CARGO_BIN_EXE_drsc"))
        .args(["--threads", "2", "validate", "--config", "cfg.json"])
        .current_dir(dir.path())
        .env("DRSC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("DRSC_THREADS"));
}
