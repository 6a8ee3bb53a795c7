use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clqr"))
}

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.json")
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn outputs_match_manifest(dir: &Path) {
    let manifest = json(&dir.join("manifest.json"));
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    let mut sorted: Vec<String> = listed.iter().map(|s| s.to_string()).collect();
    sorted.sort();
    assert_eq!(on_disk, sorted);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "learn",
        "--config",
        "/nonexistent/cfg.json",
        "--n-hat",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1);
    assert!(!out.exists());
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(code(&run(&["learn"])), 1);
    assert_eq!(code(&run(&["--version"])), 0);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let out = tmp.path().join("run");
    let res = run(&[
        "learn",
        "--config",
        cfg.to_str().unwrap(),
        "--n-hat",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&res),
        1,
        "n̂ = n is out of range for a semi-stable plant"
    );
}

#[test]
fn simulate_writes_declared_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let out = tmp.path().join("sim");
    let res = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    outputs_match_manifest(&out);
    let system = json(&out.join("system.json"));
    assert_eq!(system["n"], 10);
    let header = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(header.starts_with("t,x1,"));
    assert_eq!(json(&out.join("manifest.json"))["seed"], 2);
}

#[test]
fn learn_then_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let learned = tmp.path().join("learn");
    let res = run(&[
        "learn",
        "--config",
        cfg.to_str().unwrap(),
        "--n-hat",
        "9",
        "--out",
        learned.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    outputs_match_manifest(&learned);
    let policy = json(&learned.join("policy.json"));
    assert_eq!(policy["converged"], true);

    let analyzed = tmp.path().join("analyze");
    let gain = learned.join("gain.csv");
    let res = run(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--gain",
        gain.to_str().unwrap(),
        "--out",
        analyzed.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    outputs_match_manifest(&analyzed);
    let report = json(&analyzed.join("cost_report.json"));
    let (j, j_opt) = (
        report["J"].as_f64().unwrap(),
        report["J_opt"].as_f64().unwrap(),
    );
    assert!(
        j >= j_opt * (1.0 - 1e-9) && j < 2.0 * j_opt,
        "J = {j}, J_opt = {j_opt}"
    );

    let reduced = learned.join("reduced_gain.csv");
    let projection = learned.join("projection.json");
    let again = tmp.path().join("analyze-reduced");
    let res = run(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--gain",
        reduced.to_str().unwrap(),
        "--projection",
        projection.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let j2 = json(&again.join("cost_report.json"))["J"].as_f64().unwrap();
    assert!((j - j2).abs() <= 1e-9 * j);
}

#[test]
fn analyze_rejects_wrong_gain_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let gain = tmp.path().join("gain.csv");
    fs::write(&gain, "1,2,3\n4,5,6\n").unwrap();
    let out = tmp.path().join("run");
    let res = run(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--gain",
        gain.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1);
    assert!(!out.exists());
}

#[test]
fn refuses_to_overwrite_results() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("old.txt"), "keep").unwrap();
    let cfg = small_config();
    let res = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1);
    assert_eq!(
        fs::read_to_string(tmp.path().join("old.txt")).unwrap(),
        "keep"
    );
}

#[test]
fn sweeps_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let mut reports = Vec::new();
    for (name, parallel) in [("a", false), ("b", false), ("c", true)] {
        let out = tmp.path().join(name);
        let mut args = vec![
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--n-hat-list",
            "7,3,9",
            "--out",
            out.to_str().unwrap(),
        ];
        if parallel {
            args.push("--parallel");
        }
        let res = run(&args);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        outputs_match_manifest(&out);
        reports.push(fs::read_to_string(out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0].lines().count(), 4);
    assert!(reports[0].lines().nth(1).unwrap().starts_with("3,"));
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
    let timings = fs::read_to_string(tmp.path().join("a/timings.csv")).unwrap();
    assert!(timings.starts_with("n_hat,learn_time_ms,preconditioning_ms\n3,"));
    let report = json(&tmp.path().join("a/report.json"));
    assert_eq!(report["seed"], 5);
}
