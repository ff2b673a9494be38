use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairthresh"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn gaussian_bundle(params: [[(f64, f64); 2]; 2]) -> Value {
    let d = |(m, s): (f64, f64)| json!({"family": "gaussian", "params": [m, s]});
    json!({
        "counts": {"n": {"00": 400, "01": 300, "10": 200, "11": 300}},
        "densities": {
            "00": d(params[0][0]), "01": d(params[0][1]),
            "10": d(params[1][0]), "11": d(params[1][1]),
        }
    })
}

fn write_bundle(dir: &Path, name: &str, params: [[(f64, f64); 2]; 2]) {
    fs::write(dir.join(name), gaussian_bundle(params).to_string()).unwrap();
}

fn synth(dir: &Path) {
    ok(
        &["synth", "--seed", "7", "--scale", "0.1", "--out", "data"],
        dir,
    );
}

#[test]
fn synth_writes_splits_and_sidecar() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path());
    for name in ["full.csv", "train.csv", "val.csv", "test.csv", "synth.json"] {
        assert!(tmp.path().join("data").join(name).exists(), "{name}");
    }
    let side = read_json(&tmp.path().join("data/synth.json"));
    assert_eq!(side["seed"], 7);
    assert_eq!(side["counts"]["full"], 4000);
}

#[test]
fn fit_reports_densities_and_nll_table() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path());
    let a = ok(&["fit", "--input", "data/train.csv"], tmp.path());
    let b = ok(&["fit", "--input", "data/train.csv"], tmp.path());
    assert_eq!(a, b, "output is deterministic");
    let v: Value = serde_json::from_str(&a).unwrap();
    for cell in ["00", "01", "10", "11"] {
        assert!(v["densities"][cell]["family"].is_string());
        let rows = v["candidates"][cell].as_array().unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().any(|r| r["nll"].is_number()));
    }
}

#[test]
fn families_flag_restricts_candidates() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path());
    let v: Value = serde_json::from_str(&ok(
        &["fit", "--input", "data/train.csv", "--families", "normal"],
        tmp.path(),
    ))
    .unwrap();
    for cell in ["00", "01", "10", "11"] {
        assert_eq!(v["densities"][cell]["family"], "gaussian");
        assert_eq!(v["candidates"][cell].as_array().unwrap().len(), 1);
    }
}

#[test]
fn empty_cell_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("d.csv"),
        "logit,label,group\n-1,0,0\n-2,0,1\n1,1,0\n0.5,0,0\n",
    )
    .unwrap();
    let out = run(&["fit", "--input", "d.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("y=1, a=1"), "{err}");
}

#[test]
fn malformed_csv_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("d.csv"), "logit,label,group\nx,0,0\n").unwrap();
    assert_eq!(
        run(&["fit", "--input", "d.csv"], tmp.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["fit", "--input", "missing.csv"], tmp.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn density_json_alone_is_enough() {
    let tmp = TempDir::new().unwrap();
    write_bundle(
        tmp.path(),
        "b.json",
        [[(-1.0, 1.0), (-0.5, 1.2)], [(1.0, 1.0), (1.4, 0.9)]],
    );
    let out = ok(
        &[
            "optimize",
            "--densities",
            "b.json",
            "--constraints",
            "EOp",
            "--lambda",
            "2",
            "--out",
            "o.json",
        ],
        tmp.path(),
    );
    assert!(out.is_empty());
    let v = read_json(&tmp.path().join("o.json"));
    assert_eq!(v["status"], "converged");
    assert!(v["theta"]["theta0"].is_number());
    assert!(v.get("report").is_none());
}

#[test]
fn fit_output_feeds_optimize() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path());
    ok(
        &["fit", "--input", "data/train.csv", "--out", "d.json"],
        tmp.path(),
    );
    let v: Value =
        serde_json::from_str(&ok(&["optimize", "--densities", "d.json"], tmp.path())).unwrap();
    assert_eq!(v["status"], "converged");
}

#[test]
fn unified_gives_one_threshold() {
    let tmp = TempDir::new().unwrap();
    write_bundle(
        tmp.path(),
        "b.json",
        [[(-1.0, 1.0), (-0.5, 1.2)], [(1.0, 1.0), (1.4, 0.9)]],
    );
    let v: Value = serde_json::from_str(&ok(
        &[
            "optimize",
            "--densities",
            "b.json",
            "--constraints",
            "EOd",
            "--unified",
        ],
        tmp.path(),
    ))
    .unwrap();
    assert_eq!(v["theta"]["theta0"], v["theta"]["theta1"]);
    assert_eq!(v["unified"], true);
}

#[test]
fn pipeline_reduces_eod_against_zero_thresholds() {
    let tmp = TempDir::new().unwrap();
    ok(
        &["synth", "--seed", "21", "--scale", "0.4", "--out", "data"],
        tmp.path(),
    );
    let v: Value = serde_json::from_str(&ok(
        &[
            "optimize",
            "--input",
            "data/train.csv",
            "--eval",
            "data/test.csv",
            "--constraints",
            "EOd",
            "--lambda",
            "10",
            "--max-iter",
            "20000",
        ],
        tmp.path(),
    ))
    .unwrap();
    let after = v["report"]["eod"].as_f64().unwrap();
    let before = v["baseline_report"]["eod"].as_f64().unwrap();
    assert!(after < before, "EOd {before} -> {after}");
}

#[test]
fn unconverged_run_writes_partial_result_and_fails() {
    let tmp = TempDir::new().unwrap();
    write_bundle(
        tmp.path(),
        "b.json",
        [[(-1.0, 1.0), (-0.5, 1.2)], [(1.0, 1.0), (1.4, 0.9)]],
    );
    let out = run(
        &[
            "optimize",
            "--densities",
            "b.json",
            "--constraints",
            "EOd",
            "--max-iter",
            "2",
            "--out",
            "o.json",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        read_json(&tmp.path().join("o.json"))["status"],
        "max_iterations"
    );
}

#[test]
fn sweep_emits_one_row_per_lambda() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path());
    let v: Value = serde_json::from_str(&ok(
        &[
            "sweep",
            "--input",
            "data/train.csv",
            "--eval",
            "data/test.csv",
            "--constraints",
            "EOd",
            "--lambdas",
            "1e-2,1,1e2,1e4,1e7",
            "--csv",
            "f.csv",
        ],
        tmp.path(),
    ))
    .unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let lambdas: Vec<f64> = rows.iter().map(|r| r["lambda"].as_f64().unwrap()).collect();
    assert_eq!(lambdas, [1e-2, 1.0, 1e2, 1e4, 1e7]);
    let csv = fs::read_to_string(tmp.path().join("f.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,theta0,theta1,acc,eop,eod,dimp,bd");
    assert_eq!(lines.len(), 6);
}

#[test]
fn evaluate_perfect_predictions() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("p.csv"),
        "logit,label,group,prediction\n0.1,1,0,1\n-0.2,0,0,0\n0.3,1,1,1\n-0.4,0,1,0\n0.5,1,1,1\n-0.6,0,0,0\n",
    )
    .unwrap();
    let v: Value =
        serde_json::from_str(&ok(&["evaluate", "--input", "p.csv"], tmp.path())).unwrap();
    let m = &v["metrics"];
    assert_eq!(m["acc"], 1.0);
    for k in ["eop", "eod", "bd"] {
        assert_eq!(m[k], 0.0, "{k}");
    }
    // Same labels thresholded at zero are also perfect.
    let t = ok(
        &[
            "evaluate", "--input", "p.csv", "--theta0", "0", "--theta1", "0", "--text",
        ],
        tmp.path(),
    );
    assert!(
        t.lines()
            .any(|l| l.starts_with("EOd") && l.ends_with("0.000000")),
        "{t}"
    );
}

#[test]
fn evaluate_prints_na_for_undefined_metrics() {
    let tmp = TempDir::new().unwrap();
    // Group 1 has no positives, so EOp is undefined.
    fs::write(
        tmp.path().join("p.csv"),
        "logit,label,group\n1,1,0\n-1,0,0\n-1,0,1\n2,0,1\n",
    )
    .unwrap();
    let t = ok(
        &[
            "evaluate", "--input", "p.csv", "--theta0", "0", "--theta1", "0", "--text",
        ],
        tmp.path(),
    );
    assert!(
        t.lines()
            .any(|l| l.starts_with("EOp") && l.ends_with("n/a")),
        "{t}"
    );
    let v: Value = serde_json::from_str(&ok(
        &[
            "evaluate", "--input", "p.csv", "--theta0", "0", "--theta1", "0",
        ],
        tmp.path(),
    ))
    .unwrap();
    assert!(v["metrics"]["eop"].is_null());
    assert_eq!(
        run(&["evaluate", "--input", "p.csv"], tmp.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bounds_pass_on_shifted_gaussians() {
    let tmp = TempDir::new().unwrap();
    write_bundle(
        tmp.path(),
        "b.json",
        [[(-1.0, 1.0), (-0.6, 1.0)], [(1.0, 1.0), (1.3, 1.0)]],
    );
    let v: Value = serde_json::from_str(&ok(
        &["bounds", "--densities", "b.json", "--trials", "100"],
        tmp.path(),
    ))
    .unwrap();
    assert_eq!(v["pass"], true);
    for r in v["reports"].as_array().unwrap() {
        assert_eq!(r["trials"], 100);
        assert_eq!(r["violations"], 0);
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    write_bundle(
        tmp.path(),
        "b.json",
        [[(-1.0, 1.0), (-0.5, 1.2)], [(1.0, 1.0), (1.4, 0.9)]],
    );
    fs::write(
        tmp.path().join("run.json"),
        r#"{"densities": "b.json", "constraints": "EOp", "lambda": 3.0}"#,
    )
    .unwrap();
    let from_file: Value =
        serde_json::from_str(&ok(&["optimize", "--config", "run.json"], tmp.path())).unwrap();
    assert_eq!(from_file["objective"]["constraints"][0]["lambda"], 3.0);
    let overridden: Value = serde_json::from_str(&ok(
        &["optimize", "--config", "run.json", "--lambda", "0.5"],
        tmp.path(),
    ))
    .unwrap();
    assert_eq!(overridden["objective"]["constraints"][0]["lambda"], 0.5);
    fs::write(tmp.path().join("bad.json"), r#"{"lamda": 3.0}"#).unwrap();
    assert_eq!(
        run(&["optimize", "--config", "bad.json"], tmp.path())
            .status
            .code(),
        Some(2)
    );
}
