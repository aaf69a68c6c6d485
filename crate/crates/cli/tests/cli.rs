use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-duality"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("SPARSE_DUALITY_JOBS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

/// 3x5 dictionary and a signal built from columns 1 and 3.
fn problem(dir: &Path) -> (String, String) {
    let dict = write(
        dir,
        "dict.csv",
        "3,5\n1.0,0.2,-0.5,0.3,0.9\n0.1,1.0,0.4,-0.7,0.2\n-0.3,0.5,1.0,0.6,-0.4\n",
    );
    // y = 2 * col1 - col3
    let y = write(dir, "y.csv", "0.1\n2.7\n0.4\n");
    (dict.display().to_string(), y.display().to_string())
}

fn read_vec(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path).unwrap().lines().filter_map(|l| l.trim().parse().ok()).collect()
}

#[test]
fn noiseless_type2_recovers_the_planted_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let (dict, y) = problem(tmp.path());
    let out = run(tmp.path(), &["solve", "type2-noiseless", "--dict", &dict, "--y", &y]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let x = read_vec(&tmp.path().join("x.csv"));
    assert_eq!(x.len(), 5);
    assert!((x[1] - 2.0).abs() < 1e-6 && (x[3] + 1.0).abs() < 1e-6, "{x:?}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["solver"], "type2-noiseless");
    assert_eq!(report["support_size"], 2);
}

#[test]
fn type1_and_lambda_learning_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (dict, y) = problem(tmp.path());
    let out = run(tmp.path(), &["solve", "type1", "--dict", &dict, "--y", &y, "--lambda", "0.01", "--penalty", "lp:0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_vec(&tmp.path().join("gamma.csv")).len(), 5);

    let out = run(tmp.path(), &["learn-lambda", "--dict", &dict, "--y", &y, "--penalty", "l1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("lambda.json")).unwrap()).unwrap();
    assert!(est["lambda_star"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_input_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv").display().to_string();
    let out = run(tmp.path(), &["solve", "type1", "--dict", &missing, "--y", &missing, "--lambda", "1", "--penalty", "l1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn malformed_and_mismatched_inputs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (dict, _) = problem(tmp.path());
    let short = write(tmp.path(), "short.csv", "1.0\n2.0\n").display().to_string();
    let out = run(tmp.path(), &["solve", "type1", "--dict", &dict, "--y", &short, "--lambda", "1", "--penalty", "l1"]);
    assert_eq!(out.status.code(), Some(1));
    let bad = write(tmp.path(), "bad.csv", "2,2\n1,x\n0,1\n").display().to_string();
    let out = run(tmp.path(), &["solve", "type1", "--dict", &bad, "--y", &short, "--lambda", "1", "--penalty", "l1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
}

#[test]
fn iteration_cap_exits_with_two_and_keeps_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (dict, y) = problem(tmp.path());
    let out = run(
        tmp.path(),
        &["solve", "type2", "--dict", &dict, "--y", &y, "--lambda", "0.01", "--rule", "em", "--max-iters", "1"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("x.csv").exists());
}

#[test]
fn usage_errors_exit_with_64() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["solve", "type1"]).status.code(), Some(64));
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(64));
    let (dict, y) = problem(tmp.path());
    let out = run(tmp.path(), &["solve", "type1", "--dict", &dict, "--y", &y, "--lambda", "1", "--penalty", "lp:7"]);
    assert_eq!(out.status.code(), Some(64));
    assert_eq!(run(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bench_config_errors_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sweep.json", r#"{"n": 10, "trials": 2}"#);
    let out = run(tmp.path(), &["bench", "sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.json"));
    let cfg = write(tmp.path(), "zero.json", r#"{"trials": 0, "seed": 1}"#);
    let out = run(tmp.path(), &["bench", "sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero.json"));
}

#[test]
fn bench_sweep_writes_manifest_and_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sweep.json", r#"{"n": 20, "m": 12, "k0": 3, "trials": 2, "lambda_grid": [0.01, 0.1], "seed": 3}"#);
    let out = run(tmp.path(), &["--jobs", "1", "bench", "sweep", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = PathBuf::from(String::from_utf8_lossy(&out.stdout).lines().last().unwrap().trim());
    assert!(dir.starts_with(tmp.path()));
    for f in ["manifest.json", "mse_vs_lambda.csv", "l0_vs_lambda.csv", "learned_lambda.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn classifier_fit_and_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut body = String::from("20,3\n");
    for k in 0..10 {
        let v = 0.5 + k as f64 / 9.0;
        body += &format!("{v},0.1,1\n-{v},-0.1,0\n");
    }
    let design = write(tmp.path(), "train.csv", &body);
    let out = run(tmp.path(), &["classify", "fit", "--design", design.to_str().unwrap(), "--lambda", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = tmp.path().join("model.json");
    assert!(model.exists());

    let out = run(tmp.path(), &["classify", "predict", "--model", model.to_str().unwrap(), "--features", design.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = std::fs::read_to_string(tmp.path().join("predictions.csv")).unwrap();
    let labels: Vec<&str> = preds.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 20);
    for (k, l) in labels.iter().enumerate() {
        assert_eq!(*l, if k % 2 == 0 { "1" } else { "0" }, "row {k}");
    }
}

#[test]
fn zero_jobs_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (dict, y) = problem(tmp.path());
    let out = run(tmp.path(), &["--jobs", "0", "solve", "type1", "--dict", &dict, "--y", &y, "--lambda", "1", "--penalty", "l1"]);
    assert_eq!(out.status.code(), Some(1));
}
