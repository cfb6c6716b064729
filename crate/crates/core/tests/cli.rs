use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mdpsim::cli::csv_body;

const TWO_STATE_ENV: &str = r#""environment": {"kind": "chain", "states": [1, 2], "generator": [[-1, 1], [1, -1]], "observable": [1, 0]}"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, format!("{{{TWO_STATE_ENV}, {body}}}")).unwrap();
    path
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mdpsim"));
    cmd.args(args).env_remove("MDPSIM_SEED").env_remove("MDPSIM_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run_sub(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args, &[])
}

#[test]
fn homogenize_writes_exact_constants_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""seed": 1"#);
    let out = run_sub("homogenize", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("homogenize.csv")).unwrap();
    assert!(text.lines().take(4).all(|l| l.starts_with('#')));
    assert!(text.contains("# subcommand: homogenize"));
    assert!(text.contains("# config_sha256: "));
    assert!(text.contains("b_eff,,8.0000000000000004e-1"));
    assert!(text.contains("a_eff,,1.6000000000000001e0"));
    assert!(text.contains("K_drift"));
}

#[test]
fn invalid_generator_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"environment": {"kind": "chain", "states": [1, 2], "generator": [[-1, 1], [1, -1.5]], "observable": [1, 0]}}"#,
    )
    .unwrap();
    let out = run_sub("homogenize", &path, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));
    assert!(!dir.path().join("homogenize.csv").exists());
}

#[test]
fn unknown_key_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""seed": 1, "sed": 2"#);
    assert_eq!(run_sub("homogenize", &cfg, dir.path(), &[]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(run_sub("homogenize", &missing, dir.path(), &[]).status.code(), Some(1));
}

const SCAN: &str = r#""simulation": {"epsilon": [0.2, 0.1], "kappa": 0.1, "T": 0.05, "dt": 0.00005},
    "scan": {"eta": 0.3, "replicas": 300, "estimator": "tilted"}, "seed": 17"#;

#[test]
fn scan_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCAN);
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    assert_eq!(run_sub("mdp-scan", &cfg, &one, &["--threads", "1"]).status.code(), Some(0));
    let out = run(
        &["mdp-scan", "--config", cfg.to_str().unwrap(), "--out", four.to_str().unwrap()],
        &[("MDPSIM_THREADS", "4")],
    );
    assert_eq!(out.status.code(), Some(0));
    let a = fs::read_to_string(one.join("mdp_scan.csv")).unwrap();
    let b = fs::read_to_string(four.join("mdp_scan.csv")).unwrap();
    assert_eq!(a, b);
    let body = csv_body(&a);
    assert!(body.starts_with("epsilon,kappa,eta,estimator,n,p_hat,stderr,neg_rate,predicted_rate,regime_flag\n"));
    // two tilted rows plus the crude check at the largest ε
    assert_eq!(body.lines().count(), 4);
    assert!(body.contains("random_kappa_lt_1_6"));
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCAN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_sub("negligibility-scan", &cfg, &a, &[]);
    let out = run(
        &["negligibility-scan", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()],
        &[("MDPSIM_SEED", "99")],
    );
    assert_eq!(out.status.code(), Some(0));
    for file in ["negligibility_drift.csv", "negligibility_diffusion.csv"] {
        let x = fs::read_to_string(a.join(file)).unwrap();
        let y = fs::read_to_string(b.join(file)).unwrap();
        assert!(x.contains("# seed: 17"));
        assert!(y.contains("# seed: 99"));
    }
}

#[test]
fn simulate_and_json_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#""simulation": {"epsilon": [0.1], "kappa": 0.1, "T": 1.0, "dt": 0.01, "paths": 3, "record_every": 10, "with_drift": false},
           "output": {"formats": ["csv", "json"]}, "seed": 2"#,
    );
    let out = run_sub("simulate", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let body = csv_body(&fs::read_to_string(dir.path().join("paths.csv")).unwrap());
    // header + 3 paths × 11 recorded points
    assert_eq!(body.lines().count(), 1 + 33);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("paths.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 33);
    // terminal rows of driftless paths carry a finite log-weight
    assert!(json["rows"][10]["log_weight"].is_f64());
}

#[test]
fn decomposition_and_tail_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""martingale": {"horizon": 50, "replicas": 400}, "seed": 4"#);
    let out = run_sub("verify-decomposition", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run_sub("tail-bounds", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let body = csv_body(&fs::read_to_string(dir.path().join("tail_bounds.csv")).unwrap());
    assert!(body.lines().next().unwrap().ends_with("r,q,K,n,freq,ucl99,bound,violated"));
    assert!(body.lines().skip(1).all(|l| l.ends_with(",false")));
}
