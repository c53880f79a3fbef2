use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lqe_core::io::{SynthSpec, WavelengthGrid};

fn lqe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_spec() -> SynthSpec {
    let mut spec = SynthSpec::metameric(WavelengthGrid::HykoLike, &[0.25, 0.70], 3).unwrap();
    spec.height = 8;
    spec.width = 8;
    spec.n_train = 2;
    spec.n_val = 1;
    spec
}

fn gen_data(dir: &Path) {
    let cfg = dir.join("spec.json");
    fs::write(&cfg, serde_json::to_string(&small_spec()).unwrap()).unwrap();
    let out = lqe(&["gen-synth", "--config", s(&cfg), "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_train_config(dir: &Path, lr: f64) -> std::path::PathBuf {
    let cfg = dir.join("train.json");
    let body = format!(
        r#"{{
  "train_data": "train.hypc",
  "val_data": "val.hypc",
  "num_filters": 2,
  "peaks_per_filter": 1,
  "training": {{ "learning_rate": {lr:e}, "max_epochs": 6, "patience": 3, "batch_size": 1, "strict_deterministic": true }}
}}"#
    );
    fs::write(&cfg, body).unwrap();
    cfg
}

#[test]
fn gen_synth_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    assert!(dir.path().join("train.hypc").is_file());
    assert!(dir.path().join("val.hypc").is_file());
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let cfg = dir.path().join("spec.json");
    let other = dir.path().join("other");
    let out = lqe(&["gen-synth", "--config", s(&cfg), "--seed", "99", "--out", s(&other)]);
    assert!(out.status.success());
    assert_ne!(
        fs::read(dir.path().join("train.hypc")).unwrap(),
        fs::read(other.join("train.hypc")).unwrap()
    );
}

#[test]
fn train_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let cfg = write_train_config(dir.path(), 0.01);
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    for out_dir in [&a, &b] {
        let out = lqe(&["train", "--config", s(&cfg), "--out", s(out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["report.json", "epochs.csv", "centroids.csv", "filters.json"] {
        let x = fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs between runs");
    }
    let epochs = fs::read_to_string(a.join("epochs.csv")).unwrap();
    assert_eq!(
        epochs.lines().next().unwrap(),
        "epoch,seg_loss,L_dom,L_sep,L_bw,train_miou,val_miou"
    );
    let cents = fs::read_to_string(a.join("centroids.csv")).unwrap();
    assert_eq!(cents.lines().next().unwrap(), "epoch,filter,peak,centroid");
}

#[test]
fn eval_identical_labels_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let t = dir.path().join("val.hypc");
    let out = lqe(&["eval", "--pred", s(&t), "--truth", s(&t)]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mIoU"), "{stdout}");
    assert!(stdout.contains("100.00"), "{stdout}");
}

#[test]
fn eval_after_train_uses_prediction_file() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let cfg = write_train_config(dir.path(), 0.01);
    let run = dir.path().join("run");
    assert!(lqe(&["train", "--config", s(&cfg), "--out", s(&run)]).status.success());
    let metrics_dir = dir.path().join("metrics");
    let out = lqe(&[
        "eval",
        "--pred",
        s(&run.join("val_pred.hypc")),
        "--truth",
        s(&dir.path().join("val.hypc")),
        "--out",
        s(&metrics_dir),
    ]);
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(metrics_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(json["miou"].is_number());
}

#[test]
fn reduce_writes_pipeline_and_cubes() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    for method in [r#""method": "pca""#, r#""method": "nmf", "max_iter": 50, "tol": 1e-6"#] {
        let cfg = dir.path().join("reduce.json");
        fs::write(
            &cfg,
            format!(
                r#"{{"fit_data": ["train.hypc"], "apply_to": ["train.hypc", "val.hypc"], {method},
                    "num_components": 2, "sample_size": 90, "seed": 1}}"#
            ),
        )
        .unwrap();
        let out_dir = dir.path().join("reduced");
        let out = lqe(&["reduce", "--config", s(&cfg), "--out", s(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join("pipeline.json").is_file());
        let (cube, labels) = lqe_core::io::read_cube(out_dir.join("val.reduced.hypc")).unwrap();
        assert_eq!(cube.dims().channels, 2);
        assert!(labels.is_some());
    }
}

#[test]
fn export_filters_header() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let cfg = write_train_config(dir.path(), 0.01);
    let run = dir.path().join("run");
    assert!(lqe(&["train", "--config", s(&cfg), "--out", s(&run)]).status.success());
    let out = lqe(&[
        "export-filters",
        "--filters",
        s(&run.join("filters.json")),
        "--cube",
        s(&dir.path().join("val.hypc")),
        "--out",
        s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("filters.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "wavelength_nm,filter_1,filter_2");
    assert_eq!(csv.lines().count(), 16);
}

#[test]
fn usage_errors_exit_1() {
    let out = lqe(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = lqe(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train_data": "train.hypc", "val_data": "val.hypc", "num_filters": 2, "peaks_per_filter": 1, "training": {"patience": 0}}"#).unwrap();
    let out = lqe(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.hypc");
    fs::write(&junk, b"XYZWnot a cube").unwrap();
    let out = lqe(&["eval", "--pred", s(&junk), "--truth", s(&junk)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 0"));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(dir.path());
    let cfg = write_train_config(dir.path(), 1e308);
    let out = lqe(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
