use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::data::Task;
use crate::error::{CapsError, Result};
use crate::forest::{EvalConfig, ForestConfig};
use crate::rng::derive_seed;
use crate::search::SearchConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorConfig {
    pub epochs: usize,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig { epochs: 300 }
    }
}

/// Everything a pipeline run needs. Field names are the JSON config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub label_column: String,
    pub task: Option<Task>,
    pub positive_class: usize,
    pub folds: usize,
    pub forest: ForestConfig,
    pub collector: CollectorConfig,
    /// `num_features` is taken from the dataset.
    pub codec: CodecConfig,
    /// Stop codec training once every distinct training subset survives an
    /// encode/decode round trip from a shuffled order.
    pub codec_early_stop: bool,
    pub augment_copies: usize,
    pub seed_count: usize,
    pub search: SearchConfig,
    pub random_baseline_draws: usize,
    pub holdout_train_fraction: f64,
    pub embedding_copies: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            label_column: "label".into(),
            task: None,
            positive_class: 1,
            folds: 5,
            forest: ForestConfig::default(),
            collector: CollectorConfig::default(),
            codec: CodecConfig::default(),
            codec_early_stop: true,
            augment_copies: 25,
            seed_count: 25,
            search: SearchConfig::default(),
            random_baseline_draws: 50,
            holdout_train_fraction: 0.8,
            embedding_copies: 20,
            output_dir: PathBuf::from("caps-out"),
            seed: 0,
        }
    }
}

/// Per-component seeds, each `derive_seed(global, name)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub evaluator: u64,
    pub collector: u64,
    pub augment: u64,
    pub codec: u64,
    pub search: u64,
    pub random_baseline: u64,
    pub embeddings: u64,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CapsError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CapsError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CapsError::Config(m));
        if self.dataset.as_os_str().is_empty() {
            return bad("`dataset` path is required".into());
        }
        if self.collector.epochs == 0 {
            return bad("collector.epochs must be positive".into());
        }
        if self.augment_copies == 0 || self.seed_count == 0 || self.random_baseline_draws == 0 {
            return bad("augment_copies, seed_count and random_baseline_draws must be positive".into());
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if !(self.holdout_train_fraction > 0.0 && self.holdout_train_fraction < 1.0) {
            return bad("holdout_train_fraction must lie in (0, 1)".into());
        }
        if self.forest.n_trees == 0 {
            return bad("forest.n_trees must be positive".into());
        }
        self.search.validate()
    }

    pub fn seeds(&self) -> DerivedSeeds {
        let s = |name| derive_seed(self.seed, name);
        DerivedSeeds {
            evaluator: s("evaluator"),
            collector: s("collector"),
            augment: s("augment"),
            codec: s("codec"),
            search: s("search"),
            random_baseline: s("random-baseline"),
            embeddings: s("embeddings"),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            folds: self.folds,
            forest: self.forest.clone(),
            positive_class: self.positive_class,
            seed: self.seeds().evaluator,
        }
    }

    pub fn codec_config(&self, num_features: usize) -> CodecConfig {
        CodecConfig {
            num_features,
            seed: self.seeds().codec,
            ..self.codec.clone()
        }
        .resolved()
    }

    pub fn records_path(&self) -> PathBuf {
        self.output_dir.join("records.jsonl")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("codec.json")
    }

    pub fn search_log_path(&self) -> PathBuf {
        self.output_dir.join("search_log.jsonl")
    }

    pub fn report_path(&self) -> PathBuf {
        self.output_dir.join("report.json")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.output_dir.join("embeddings.csv")
    }
}
