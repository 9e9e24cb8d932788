//! Cross-validated downstream score of a feature subset.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::tree::{fit_forest, ForestConfig, Matrix};
use crate::data::metrics::{
    accuracy, f1_binary, micro_f1, one_minus_rae, regression_scores, roc_auc, RegressionScores,
};
use crate::data::{holdout_split, kfold, Dataset, FoldPlan, Task};
use crate::error::{CapsError, Result};
use crate::rng::derive_indexed;
use crate::subset::FeatureSubset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub folds: usize,
    pub forest: ForestConfig,
    /// Class id treated as positive for binary F1.
    pub positive_class: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 5,
            forest: ForestConfig::default(),
            positive_class: 1,
            seed: 0,
        }
    }
}

/// Held-out scores of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    /// The task's primary metric, unclipped.
    pub primary: f64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
    pub regression: Option<RegressionScores>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Scores subsets with a seeded random forest under a fixed fold plan and
/// memoizes results by canonical subset key.
pub struct SubsetEvaluator {
    data: Dataset,
    config: EvalConfig,
    folds: FoldPlan,
    cache: Mutex<HashMap<String, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl SubsetEvaluator {
    pub fn new(data: Dataset, config: EvalConfig) -> Result<Self> {
        if data.task() == Task::Binary && config.positive_class >= data.n_classes() {
            return Err(CapsError::Config(format!(
                "positive class {} out of range for {} classes",
                config.positive_class,
                data.n_classes()
            )));
        }
        let folds = kfold(data.n_rows(), config.folds, derive_indexed(config.seed, "folds", 0))?;
        Ok(SubsetEvaluator {
            data,
            config,
            folds,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn num_features(&self) -> usize {
        self.data.n_features()
    }

    pub fn cache_stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Mean cross-validated primary metric, clipped to `[0, 1]`.
    pub fn evaluate(&self, subset: &FeatureSubset) -> Result<f64> {
        self.check(subset)?;
        let key = subset.key();
        if let Some(&v) = self.cache.lock().expect("cache poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let folds = self.fold_scores(subset)?;
        let mean = folds.iter().map(|s| s.primary).sum::<f64>() / folds.len() as f64;
        let v = mean.clamp(0.0, 1.0);
        self.cache.lock().expect("cache poisoned").insert(key, v);
        Ok(v)
    }

    /// Uncached per-fold scores.
    pub fn fold_scores(&self, subset: &FeatureSubset) -> Result<Vec<SplitScores>> {
        self.check(subset)?;
        (0..self.folds.k())
            .map(|f| {
                let (train, test) = self.folds.split(f);
                self.score_split(
                    subset,
                    &train,
                    &test,
                    derive_indexed(self.config.seed, "fold", f as u64),
                )
            })
            .collect()
    }

    /// Single seeded train/test split with `train_frac` of rows for training.
    pub fn holdout(&self, subset: &FeatureSubset, train_frac: f64) -> Result<SplitScores> {
        self.check(subset)?;
        let (train, test) = holdout_split(
            self.data.n_rows(),
            train_frac,
            derive_indexed(self.config.seed, "holdout", 0),
        );
        self.score_split(
            subset,
            &train,
            &test,
            derive_indexed(self.config.seed, "holdout-forest", 0),
        )
    }

    fn check(&self, subset: &FeatureSubset) -> Result<()> {
        if subset.is_empty() {
            return Err(CapsError::contract("cannot evaluate an empty subset"));
        }
        subset.check_bound(self.data.n_features())
    }

    fn score_split(&self, subset: &FeatureSubset, train: &[usize], test: &[usize], seed: u64) -> Result<SplitScores> {
        let p = subset.len();
        let x_train = self.data.project(train, subset);
        let y_train = self.data.labels_at(train);
        let x_test = self.data.project(test, subset);
        let y_test = self.data.labels_at(test);
        let task = self.data.task();
        let cfg = ForestConfig {
            seed,
            ..self.config.forest.clone()
        };
        let forest = fit_forest(Matrix::new(&x_train, p)?, &y_train, task, self.data.n_classes(), &cfg)?;
        let test_m = Matrix::new(&x_test, p)?;
        let pred = forest.predict(test_m)?;
        Ok(match task {
            Task::Binary => {
                let pos = self.config.positive_class;
                let s = f1_binary(&y_test, &pred, pos as f64)?;
                let proba = forest.predict_proba(test_m, pos)?;
                SplitScores {
                    primary: s.f1,
                    accuracy: Some(accuracy(&y_test, &pred)?),
                    precision: Some(s.precision),
                    recall: Some(s.recall),
                    auc: roc_auc(&y_test, &proba, pos as f64).ok(),
                    regression: None,
                }
            }
            Task::Multiclass => SplitScores {
                primary: micro_f1(&y_test, &pred, self.data.n_classes())?,
                accuracy: Some(accuracy(&y_test, &pred)?),
                precision: None,
                recall: None,
                auc: None,
                regression: None,
            },
            Task::Regression => SplitScores {
                primary: one_minus_rae(&y_test, &pred)?,
                accuracy: None,
                precision: None,
                recall: None,
                auc: None,
                regression: Some(regression_scores(&y_test, &pred)?),
            },
        })
    }
}
