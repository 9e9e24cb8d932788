use std::path::Path;

use caps_core::codec::load_checkpoint;
use caps_core::collector::load_records;
use caps_core::data::{load_csv, Task};
use caps_core::forest::SubsetEvaluator;
use caps_core::pipeline::{embedding_rows, run_pipeline, CollectorConfig, Report, RunConfig, EMBEDDING_SUBSETS};
use caps_core::search::{load_search_log, SearchConfig};
use caps_core::synth::{planted, PlantedSpec};
use caps_core::{CapsError, FeatureSubset};

fn small_config(dir: &Path) -> RunConfig {
    let data = planted(&PlantedSpec {
        rows: 80,
        features: 8,
        informative: vec![0, 2, 6],
        redundant: vec![(7, 2, 0.05)],
        label_noise: 0.0,
        task: Task::Binary,
        seed: 3,
    })
    .unwrap();
    let csv = dir.join("data.csv");
    data.write_csv(&csv, "label").unwrap();
    let mut cfg = RunConfig {
        dataset: csv,
        output_dir: dir.join("out"),
        collector: CollectorConfig { epochs: 25 },
        augment_copies: 5,
        seed_count: 4,
        search: SearchConfig {
            steps_per_seed: 20,
            horizon: 10,
            ppo_batch: 16,
            ppo_epochs: 2,
            hidden: [16, 16],
            ..Default::default()
        },
        random_baseline_draws: 7,
        embedding_copies: 4,
        seed: 5,
        ..Default::default()
    };
    cfg.forest.n_trees = 8;
    cfg.codec.d = 8;
    cfg.codec.heads = 2;
    cfg.codec.inducing = 4;
    cfg.codec.epochs = 30;
    cfg.codec.lr = 0.01;
    cfg
}

#[test]
fn report_agrees_with_fresh_evaluation_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = run_pipeline(&cfg).unwrap();

    let data = load_csv(&cfg.dataset, "label", None).unwrap();
    let names: Vec<String> = report
        .best_subset
        .indices
        .ids()
        .iter()
        .map(|&j| data.feature_names()[j].clone())
        .collect();
    let ev = SubsetEvaluator::new(data, cfg.eval_config()).unwrap();
    assert_eq!(ev.evaluate(&report.best_subset.indices).unwrap(), report.best_v);
    assert_eq!(ev.evaluate(&FeatureSubset::all(8)).unwrap(), report.all_features_v);
    let folds = ev.fold_scores(&report.best_subset.indices).unwrap();
    let mean = folds.iter().map(|f| f.primary).sum::<f64>() / folds.len() as f64;
    assert!((mean - report.cv.mean_primary).abs() < 1e-12);
    assert_eq!(report.best_subset.names, names);
    assert_eq!(report.subset_ratio, report.best_subset.indices.len() as f64 / 8.0);
    assert_eq!(report.metric, "f1");
    assert_eq!(report.random_baseline.draws, 7);
    assert!(report.random_baseline.min <= report.random_baseline.median);
    assert!(report.random_baseline.median <= report.random_baseline.max);

    // the search never reports worse than its best seed
    let top = report
        .search
        .seeds
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(report.best_v >= top);
    assert!(report.search.seeds.windows(2).all(|w| w[0].1 >= w[1].1));

    let records = load_records(&cfg.records_path()).unwrap();
    assert_eq!(records.len(), report.records);
    assert_eq!(records.len(), 26);
    let codec = load_checkpoint(&cfg.checkpoint_path()).unwrap();
    assert_eq!(codec.epochs_trained, report.codec.epochs_trained);
    assert_eq!(report.codec.loss_curve.len(), codec.epochs_trained);
    assert_eq!(
        load_search_log(&cfg.search_log_path()).unwrap().len(),
        report.search.log_entries
    );

    let parsed: Report = serde_json::from_str(&std::fs::read_to_string(cfg.report_path()).unwrap()).unwrap();
    assert_eq!(parsed.without_timings().unwrap(), report.without_timings().unwrap());
    for stage in ["load", "collect", "train", "search", "evaluate"] {
        assert!(report.timings.contains_key(stage), "{stage}");
    }
}

#[test]
fn exported_embeddings_are_order_free() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    run_pipeline(&cfg).unwrap();
    let records = load_records(&cfg.records_path()).unwrap();
    let codec = load_checkpoint(&cfg.checkpoint_path()).unwrap();
    let rows = embedding_rows(&records, &codec, 4, 1).unwrap();
    let mut distinct: Vec<_> = records.iter().map(|r| r.subset.clone()).collect();
    distinct.sort();
    distinct.dedup();
    let subsets = distinct.len().min(EMBEDDING_SUBSETS);
    assert_eq!(rows.len(), subsets * 5);
    for group in rows.chunks(5) {
        assert!(group.iter().all(|r| r.subset_id == group[0].subset_id));
        for r in &group[1..] {
            let diff = r
                .values
                .iter()
                .zip(&group[0].values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-8, "{diff}");
        }
    }

    let csv = load_csv(&cfg.embeddings_path(), "subset_id", None).unwrap();
    assert_eq!(csv.n_rows(), subsets * (cfg.embedding_copies + 1));
    assert_eq!(csv.feature_names()[0], "permutation_id");
    assert_eq!(csv.n_features(), 1 + codec.config().d);
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.dataset = dir.path().join("missing.csv");
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("load"));

    let mut cfg = small_config(dir.path());
    cfg.seed_count = 0;
    assert!(matches!(run_pipeline(&cfg), Err(CapsError::Config(_))));

    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"dataset": "x.csv", "bogus": 1}"#).unwrap();
    assert!(matches!(RunConfig::from_file(&path), Err(CapsError::Config(_))));
}
