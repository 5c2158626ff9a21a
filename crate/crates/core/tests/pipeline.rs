//! End-to-end runs on a tiny configuration: reproducibility and run-directory rules.

use std::fs;
use std::path::Path;

use vig_core::cam::CamMethod;
use vig_core::config::RunConfig;
use vig_core::manifest::Manifest;
use vig_core::pipeline::{self, RunDir};
use vig_core::Error;

const TINY: &str = r#"
[dataset]
count = 12
[model]
width_multiplier = 0.03125
[train]
max_epochs = 1
[split]
test_frac = 0.2
val_frac = 0.2
folds = 2
[cam]
benchmark_samples = 1
"#;

fn tiny() -> RunConfig {
    RunConfig::from_toml(TINY, None).unwrap()
}

fn run_all(dir: &Path) -> RunDir {
    let rd = RunDir::open(dir, tiny()).unwrap();
    pipeline::synth(&rd, 2).unwrap();
    pipeline::preprocess(&rd, 2).unwrap();
    pipeline::train_cmd(&rd).unwrap();
    pipeline::evaluate_cmd(&rd).unwrap();
    rd
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(a.path());
    run_all(b.path());
    for rel in [
        "synth/manifest.jsonl",
        "synth/truth.jsonl",
        "synth/images/s0003.png",
        "preprocess/manifest.jsonl",
        "train/split.json",
        "train/weights.vigw",
        "train/history.jsonl",
        "train/metrics.json",
    ] {
        let x = fs::read(a.path().join(rel)).unwrap();
        let y = fs::read(b.path().join(rel)).unwrap();
        assert!(x == y, "{rel} differs between identical runs");
    }
}

#[test]
fn stages_write_their_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let rd = run_all(d.path());
    let tiles = Manifest::read(&d.path().join("preprocess/manifest.jsonl")).unwrap();
    assert_eq!(tiles.header.stage, "preprocess");
    assert_eq!(tiles.header.config_hash, rd.hash);
    assert_eq!(tiles.active().count(), 48);
    for r in tiles.active() {
        assert!(tiles.resolve(&r.path).exists());
        assert_eq!(r.id, format!("{}_q{}", r.parent_id, r.quadrant.unwrap()));
    }

    let split: pipeline::SplitFile =
        serde_json::from_str(&fs::read_to_string(d.path().join("train/split.json")).unwrap()).unwrap();
    let parent = |id: &String| id.split('_').next().unwrap().to_string();
    let test_parents: std::collections::BTreeSet<String> = split.test.iter().map(parent).collect();
    assert!(split.train.iter().chain(&split.val).all(|id| !test_parents.contains(&parent(id))));
    assert_eq!(split.train.len() + split.val.len() + split.test.len(), 48);

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("train/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["config_hash"], rd.hash.as_str());
    assert_eq!(metrics["scores"].as_array().unwrap().len(), split.test.len());

    let v = pipeline::cam_cmd(&rd, CamMethod::GradCam).unwrap();
    assert_eq!(v["status"], "ok");
    let cam_dir = d.path().join("cam/grad-cam");
    assert!(cam_dir.join("sheet.png").exists());
    assert!(cam_dir.join("report.json").exists());
    let lines = fs::read_to_string(cam_dir.join("heatmaps.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), split.test.len());

    pipeline::augment_preview_cmd(&rd).unwrap();
    assert!(d.path().join("augment-preview.png").exists());
}

#[test]
fn run_dir_refuses_a_different_config() {
    let d = tempfile::tempdir().unwrap();
    RunDir::open(d.path(), tiny()).unwrap();
    RunDir::open(d.path(), tiny()).unwrap();
    let mut other = tiny();
    other.run.seed += 1;
    assert!(matches!(RunDir::open(d.path(), other), Err(Error::Config(_))));
}

#[test]
fn later_stages_need_earlier_ones() {
    let d = tempfile::tempdir().unwrap();
    let rd = RunDir::open(d.path(), tiny()).unwrap();
    assert!(matches!(pipeline::preprocess(&rd, 1), Err(Error::Data(_))));
    assert!(matches!(pipeline::train_cmd(&rd), Err(Error::Data(_))));
    assert!(matches!(pipeline::evaluate_cmd(&rd), Err(Error::Data(_))));
}

#[test]
fn describe_model_reports_parameter_count() {
    let (table, json) = pipeline::describe_model(&RunConfig::preset(vig_core::config::Preset::Full)).unwrap();
    assert_eq!(json["params"], 25_802_695);
    assert!(table.contains("25,802,695") || table.contains("25802695"));
}
