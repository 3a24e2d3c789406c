use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use loadsplit::io;
use loadsplit::{LoadMatrix, LoadRole, TimeGrid};
use serde_json::Value;
use tempfile::TempDir;

fn loadsplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadsplit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(out: Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "stdout should be one JSON line: {stdout}");
    serde_json::from_str(&stdout).unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, format!("days = 8\n{extra}")).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn help_lists_every_command() {
    let out = loadsplit(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["simulate", "disaggregate", "fit", "evaluate", "pipeline"] {
        assert!(text.contains(cmd), "{cmd} missing from help:\n{text}");
    }
}

#[test]
fn simulate_is_reproducible_and_reingestable() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    ok_json(loadsplit(&["simulate", "--config", &cfg, "--seed", "5", "--out", s(&a)]));
    ok_json(loadsplit(&["simulate", "--config", &cfg, "--seed", "5", "--out", s(&b)]));
    ok_json(loadsplit(&["simulate", "--config", &cfg, "--seed", "6", "--out", s(&c)]));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));

    let truth = io::read_ground_truth(&a).unwrap();
    assert_eq!(truth.total.n_days(), 8);
    assert!(truth.params_used.is_some());
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "bogus_key = 3\n");
    let out = loadsplit(&["simulate", "--config", &cfg, "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_key"), "{err}");
}

#[test]
fn missing_loads_file_fails() {
    let tmp = TempDir::new().unwrap();
    let out = loadsplit(&[
        "disaggregate",
        "--loads",
        s(&tmp.path().join("nope.csv")),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn disaggregate_converges_and_is_stable_on_its_own_output() {
    let tmp = TempDir::new().unwrap();
    let truth = tmp.path().join("truth");
    ok_json(loadsplit(&["simulate", "--out", s(&truth)]));
    let first = tmp.path().join("first");
    let v = ok_json(loadsplit(&[
        "disaggregate",
        "--loads",
        s(&truth.join(io::LOADS_FILE)),
        "--out",
        s(&first),
    ]));
    let iters = v["disaggregation"]["iterations_run"].as_u64().unwrap();
    assert!(iters <= 20, "{iters} iterations");
    assert_eq!(v["disaggregation"]["converged"], true);

    // Feed the combined estimate back in; the split should barely move.
    let grid = TimeGrid::default();
    let (xs, xf) = io::read_disaggregation(&first, &grid).unwrap();
    let again_dir = tmp.path().join("again_in");
    fs::create_dir_all(&again_dir).unwrap();
    let combined = LoadMatrix::new(xs.values() + xf.values(), LoadRole::Total).unwrap();
    io::write_loads(&again_dir.join(io::LOADS_FILE), &combined).unwrap();
    let second = tmp.path().join("second");
    ok_json(loadsplit(&[
        "disaggregate",
        "--loads",
        s(&again_dir.join(io::LOADS_FILE)),
        "--out",
        s(&second),
    ]));
    let (xs2, _) = io::read_disaggregation(&second, &grid).unwrap();
    let diff = (xs2.values() - xs.values()).mapv(|v| v * v).sum().sqrt();
    let rel = diff / xs.frobenius_norm();
    assert!(rel < 0.02, "shiftable moved by {rel}");
}

#[test]
fn fit_pins_q_and_rejects_negative_gamma() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let truth = tmp.path().join("truth");
    ok_json(loadsplit(&["simulate", "--config", &cfg, "--out", s(&truth)]));
    let files = |name: &str| truth.join(name).to_string_lossy().into_owned();
    let (sh, fx, te, pr) = (
        files(io::TRUTH_SHIFTABLE_FILE),
        files(io::TRUTH_FIXED_FILE),
        files(io::TEMPERATURES_FILE),
        files(io::PRICES_FILE),
    );
    let out = tmp.path().join("fit");
    let base = ["fit", "--shiftable", &sh, "--fixed", &fx, "--temps", &te, "--prices", &pr];

    let mut args = base.to_vec();
    args.extend(["--pin-q", "--out", s(&out)]);
    let v = ok_json(loadsplit(&args));
    assert_eq!(v["fit"]["status"], "optimal");
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join(io::FIT_FILE)).unwrap()).unwrap();
    let q = fit["params"]["q"].as_array().unwrap();
    assert_eq!(q.len(), 24);
    assert!(q.iter().all(|v| v.as_f64() == Some(0.0)));
    assert!(out.join(io::PROFILES_FILE).exists());

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "gamma_a = -1.0\n").unwrap();
    let mut args = base.to_vec();
    args.extend(["--config", s(&bad), "--out", s(&out)]);
    let res = loadsplit(&args);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("gamma"));
}

#[test]
fn evaluate_scores_a_result_directory() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("run");
    ok_json(loadsplit(&["pipeline", "--config", &cfg, "--out", s(&out)]));
    let eval = tmp.path().join("eval");
    let v = ok_json(loadsplit(&[
        "evaluate",
        "--truth-dir",
        s(&out.join("truth")),
        "--result-dir",
        s(&out),
        "--out",
        s(&eval),
    ]));
    assert!(v["scores"]["disaggregation"]["f1"].as_f64().unwrap() >= 0.9);
    assert_eq!(v["scores"]["recovery"]["rows"].as_array().unwrap().len(), 5);
    assert!(eval.join("metrics.json").exists());
}

#[test]
fn default_pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let v = ok_json(loadsplit(&["pipeline", "--out", s(&a)]));
    assert!(v["elapsed_s"].as_f64().unwrap() < 120.0);
    assert_eq!(v["converged"], true);
    assert!(v["iterations_run"].as_u64().unwrap() <= 20);
    for f in [
        io::SHIFTABLE_FILE,
        io::FIXED_FILE,
        io::DIAGNOSTICS_FILE,
        io::FIT_FILE,
        io::FIT_REAL_FILE,
        io::TABLE1_FILE,
        io::PROFILES_FILE,
        io::REPORT_FILE,
    ] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(a.join(io::REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["comparison"].as_array().unwrap().len(), 5);

    ok_json(loadsplit(&["pipeline", "--out", s(&b)]));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_eq!(dir_bytes(&a.join("truth")), dir_bytes(&b.join("truth")));
}

#[test]
fn pipeline_on_given_loads_skips_truth() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let data = tmp.path().join("data");
    ok_json(loadsplit(&["simulate", "--config", &cfg, "--out", s(&data)]));
    let out = tmp.path().join("run");
    let v = ok_json(loadsplit(&["pipeline", "--loads", s(&data), "--out", s(&out)]));
    assert!(v["scores"].is_null());
    assert!(out.join(io::FIT_FILE).exists());
    assert!(!out.join(io::FIT_REAL_FILE).exists());
}
