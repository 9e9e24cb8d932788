use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{DerivedSeeds, RunConfig};
use crate::data::Task;
use crate::forest::{CacheStats, SplitScores};
use crate::search::UpdateDiagnostics;
use crate::subset::FeatureSubset;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSubset {
    pub indices: FeatureSubset,
    pub names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub draws: usize,
    pub subset_size: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    /// Unclipped primary metric of each fold.
    pub folds: Vec<SplitScores>,
    pub mean_primary: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub train_fraction: f64,
    pub scores: SplitScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub seeds: Vec<(FeatureSubset, f64)>,
    pub log_entries: usize,
    pub decoded_steps: usize,
    pub updates: Vec<UpdateDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecSummary {
    pub corpus_size: usize,
    pub epochs_trained: usize,
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub report: u32,
    pub records: u32,
    pub checkpoint: u32,
    pub search_log: u32,
    pub embeddings: u32,
}

/// Final pipeline output. `timings` is the only field that may differ
/// between runs with the same config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub dataset: String,
    pub task: Task,
    pub rows: usize,
    pub num_features: usize,
    /// Primary metric: `f1`, `micro_f1` or `one_minus_rae`.
    pub metric: String,
    pub best_subset: NamedSubset,
    /// Mean 5-fold score of the best subset, clipped to [0, 1].
    pub best_v: f64,
    pub subset_ratio: f64,
    pub all_features_v: f64,
    pub random_baseline: RandomBaseline,
    /// The score used for selection (`cv`, mean over folds).
    pub cv: CrossValidation,
    /// A single seeded train/test split, reported alongside `cv`.
    pub holdout: Holdout,
    pub records: usize,
    pub codec: CodecSummary,
    pub search: SearchSummary,
    pub cache: CacheStats,
    pub seeds: DerivedSeeds,
    pub formats: FormatVersions,
    pub config: RunConfig,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    /// JSON text with `timings` removed, for run-to-run comparison.
    pub fn without_timings(&self) -> serde_json::Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        serde_json::to_string_pretty(&v)
    }
}
