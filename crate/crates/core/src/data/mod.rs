//! Dataset loading, fold plans, metrics and the one-hot subset representation.

mod dataset;
mod folds;
pub mod metrics;

pub use dataset::{load_csv, one_hot_rep, subset_from_one_hot, Dataset, Task, MIN_ROWS};
pub use folds::{holdout_split, kfold, FoldPlan};
