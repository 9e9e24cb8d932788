//! Random-forest downstream evaluation.

mod eval;
mod tree;

pub use eval::{CacheStats, EvalConfig, SplitScores, SubsetEvaluator};
pub use tree::{fit_forest, Forest, ForestConfig, Matrix, Tree, TreeNode};
