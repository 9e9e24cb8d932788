use std::path::Path;
use std::process::{Command, Output};

use caps_core::data::{load_csv, Task};
use caps_core::pipeline::Report;
use caps_core::synth::{planted, PlantedSpec};
use serde_json::{json, Value};

fn caps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caps"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_dataset(dir: &Path) -> String {
    let ds = planted(&PlantedSpec {
        rows: 60,
        features: 6,
        informative: vec![1, 3, 4],
        redundant: vec![],
        label_noise: 0.0,
        task: Task::Binary,
        seed: 4,
    })
    .unwrap();
    let path = dir.join("tiny.csv");
    ds.write_csv(&path, "target").unwrap();
    path.display().to_string()
}

fn tiny_config(dir: &Path, dataset: &str) -> String {
    let cfg = json!({
        "dataset": dataset,
        "label_column": "target",
        "collector": { "epochs": 15 },
        "codec": { "d": 8, "heads": 2, "inducing": 4, "rff_hidden": 16, "lr": 0.01, "batch_size": 16, "epochs": 40 },
        "augment_copies": 5,
        "seed_count": 3,
        "search": { "steps_per_seed": 10, "horizon": 5, "ppo_batch": 8, "ppo_epochs": 2, "hidden": [8, 8] },
        "forest": { "n_trees": 5 },
        "random_baseline_draws": 5,
        "embedding_copies": 3,
        "output_dir": dir.join("out"),
        "seed": 7
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn run_writes_every_artifact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let cfg = tiny_config(dir.path(), &data);
    let summary = stdout_json(&caps(&["run", "--config", &cfg]));
    let out = dir.path().join("out");
    for f in [
        "records.jsonl",
        "codec.json",
        "search_log.jsonl",
        "report.json",
        "embeddings.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let first: Report = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(summary["best_v"].as_f64().unwrap(), first.best_v);
    assert!(first.subset_ratio > 0.0 && first.subset_ratio <= 1.0);
    assert_eq!(first.cv.folds.len(), 5);
    assert!(first.search.seeds.iter().all(|(_, v)| *v <= first.best_v));

    stdout_json(&caps(&["run", "--config", &cfg]));
    let second: Report = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(first.without_timings().unwrap(), second.without_timings().unwrap());

    // stages rerun on their own from the saved artifacts
    stdout_json(&caps(&["search", "--config", &cfg]));
    let exported = stdout_json(&caps(&["export-embeddings", "--config", &cfg]));
    let rows = exported["rows"].as_u64().unwrap() as usize;
    assert_eq!(rows % 4, 0);
    let emb = load_csv(&out.join("embeddings.csv"), "subset_id", None).unwrap();
    assert_eq!(emb.n_rows(), rows);
    assert_eq!(emb.n_features(), 1 + 8);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let cfg = tiny_config(dir.path(), &data);
    let out_a = dir.path().join("a").display().to_string();
    let out_b = dir.path().join("b").display().to_string();
    stdout_json(&caps(&["collect", "--config", &cfg, "--out", &out_a, "--seed", "1"]));
    stdout_json(&caps(&["collect", "--config", &cfg, "--out", &out_b, "--seed", "2"]));
    let a = std::fs::read_to_string(Path::new(&out_a).join("records.jsonl")).unwrap();
    let b = std::fs::read_to_string(Path::new(&out_b).join("records.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn collect_then_train_compose() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let cfg = tiny_config(dir.path(), &data);
    let c = stdout_json(&caps(&["collect", "--config", &cfg]));
    assert_eq!(c["records"], 16);
    let t = stdout_json(&caps(&["train", "--config", &cfg]));
    assert!(t["epochs_trained"].as_u64().unwrap() >= 1);
    assert!(dir.path().join("out/codec.json").exists());
}

#[test]
fn eval_scores_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let v = stdout_json(&caps(&["eval", "1,3,4", "--dataset", &data, "--label", "target"]));
    let score = v["v"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(v["subset"], json!([1, 3, 4]));
    assert_eq!(v["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv").display().to_string();
    let out = caps(&["eval", "0", "--dataset", &missing]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("load"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"dataset\": 3 }").unwrap();
    assert_eq!(
        caps(&["run", "--config", &bad.display().to_string()]).status.code(),
        Some(2)
    );
    let data = write_dataset(dir.path());
    assert_eq!(
        caps(&["eval", "a,b", "--dataset", &data, "--label", "target"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(caps(&["run"]).status.code(), Some(2));
    assert_eq!(caps(&["bogus"]).status.code(), Some(2));

    // export needs a trained checkpoint in the output directory
    let cfg = tiny_config(dir.path(), &data);
    stdout_json(&caps(&["collect", "--config", &cfg]));
    assert_eq!(caps(&["export-embeddings", "--config", &cfg]).status.code(), Some(1));
}
