use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dexfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dexfit"))
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .expect("spawn dexfit")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn synth(dir: &Path, frames: usize) {
    let out = dexfit(&["synth", "--frames", &frames.to_string(), "--seed", "4", "--out-dir", path(dir)]);
    let summary = json_stdout(&out);
    assert_eq!(summary["frames"], frames);
    for name in ["keypoints.json", "gt.json", "init.json", "camera.json"] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
}

fn train(kind: &str, data: &Path, out: &Path) -> Value {
    let run = dexfit(&[
        "train-prior",
        "--kind",
        kind,
        "--data",
        path(data),
        "--steps",
        "15",
        "--hidden",
        "16",
        "--out",
        path(out),
    ]);
    json_stdout(&run)
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = dexfit(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_dexfit")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["filter", "rectify", "train-prior", "fit", "eval", "gradcheck", "synth"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn missing_input_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dexfit(&["filter", "--poses", path(&dir.path().join("absent.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 1);
    std::fs::write(dir.path().join("w.json"), r#"{"no_such_weight": 1.0}"#).unwrap();
    let d = |n: &str| dir.path().join(n);
    let body = d("body.json");
    let hand = d("hand.json");
    train("body", &d("gt.json"), &body);
    train("hand", &d("gt.json"), &hand);
    let out = dexfit(&[
        "fit",
        "--keypoints",
        path(&d("keypoints.json")),
        "--init",
        path(&d("init.json")),
        "--camera",
        path(&d("camera.json")),
        "--body-prior",
        path(&body),
        "--hand-prior",
        path(&hand),
        "--weights",
        path(&d("w.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_weight"));
}

#[test]
fn eval_reports_the_three_default_regions() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    let gt = dir.path().join("gt.json");
    let report = json_stdout(&dexfit(&["eval", "--pred", path(&gt), "--gt", path(&gt)]));
    assert_eq!(report["schema_version"], 1);
    let regions = report["regions"].as_object().unwrap();
    assert_eq!(regions.len(), 3);
    for name in ["ubody-f", "lhand", "rhand"] {
        let m = &regions[name];
        for key in ["mpjpe", "mpvpe", "tr_v2v"] {
            assert!(m[key].as_f64().unwrap().abs() < 1e-9, "{name} {key} = {}", m[key]);
        }
    }
}

#[test]
fn eval_rejects_frame_count_mismatch() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 2);
    synth(b.path(), 3);
    let out = dexfit(&["eval", "--pred", path(&a.path().join("gt.json")), "--gt", path(&b.path().join("gt.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn filter_and_rectify_emit_one_record_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3);
    let gt = dir.path().join("gt.json");
    let out = dexfit(&["filter", "--poses", path(&gt)]);
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|r| r["accepted"].is_boolean()));

    let fixed = dir.path().join("fixed.json");
    let out = dexfit(&["rectify", "--poses", path(&gt), "--out", path(&fixed)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
    assert!(fixed.is_file());
}

#[test]
fn gradcheck_passes_and_reports_every_primitive() {
    let report = json_stdout(&dexfit(&["gradcheck", "--samples", "2"]));
    assert_eq!(report["passed"], true);
    assert!(report["primitives"].as_array().unwrap().len() > 5);
}

#[test]
fn synth_fit_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    synth(dir.path(), 2);
    let body = d("body.json");
    let hand = d("hand.json");
    let report = train("body", &d("gt.json"), &body);
    assert_eq!(report["kind"], "body");
    assert!(report["recon_mpjpe_mm"].as_f64().unwrap().is_finite());
    assert_eq!(train("hand", &d("gt.json"), &hand)["poses"], 4);

    let fit = d("fit.json");
    let out = dexfit(&[
        "fit",
        "--keypoints",
        path(&d("keypoints.json")),
        "--init",
        path(&d("init.json")),
        "--camera",
        path(&d("camera.json")),
        "--body-prior",
        path(&body),
        "--hand-prior",
        path(&hand),
        "--max-iterations",
        "10",
        "--out",
        path(&fit),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = json_stdout(&dexfit(&["eval", "--pred", path(&fit), "--gt", path(&d("gt.json")), "--summary"]));
    assert_eq!(report["frames"], 2);
    assert!(report["per_frame"].as_array().unwrap().is_empty());
    assert!(report["regions"]["ubody-f"]["mpjpe"].as_f64().unwrap().is_finite());
}

#[test]
fn thread_count_must_be_positive() {
    let out = Command::new(env!("CARGO_BIN_EXE_dexfit"))
        .args(["gradcheck", "--samples", "1"])
        .env("DEXFIT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
