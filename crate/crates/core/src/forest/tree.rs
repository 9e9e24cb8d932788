//! CART trees and bagged forests over a dense row-major matrix.

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{CapsError, Result};
use crate::rng::{derive_indexed, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Split candidates per node; `None` means `ceil(sqrt(p))`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Disabled only to reproduce plain single-tree CART.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 20,
            max_features: None,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn features_per_split(&self, p: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p)
    }
}

/// Borrowed training matrix.
#[derive(Clone, Copy, Debug)]
pub struct Matrix<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl<'a> Matrix<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Result<Self> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(CapsError::dim("matrix", &[data.len()], &[cols]));
        }
        Ok(Matrix {
            data,
            rows: data.len() / cols,
            cols,
        })
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Class distribution (classification) or `[mean]` (regression).
        value: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { value } => return value,
            }
        }
    }

    /// Predicted class id (ties to the lower id) or regression mean.
    pub fn predict_row(&self, row: &[f64], task: Task) -> f64 {
        let v = self.leaf(row);
        if task.is_classification() {
            argmax_low(v) as f64
        } else {
            v[0]
        }
    }
}

fn argmax_low(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Builder<'a> {
    x: Matrix<'a>,
    y: &'a [f64],
    task: Task,
    n_classes: usize,
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
    rng: SeededRng,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> Vec<f64> {
        if self.task.is_classification() {
            let mut h = vec![0.0; self.n_classes];
            for &r in rows {
                h[self.y[r] as usize] += 1.0;
            }
            let n = rows.len() as f64;
            h.iter_mut().for_each(|c| *c /= n);
            h
        } else {
            vec![rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64]
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        let first = self.y[rows[0]];
        rows.iter().all(|&r| self.y[r] == first)
    }

    /// Impurity times sample count: Gini for classes, squared error otherwise.
    fn weighted_impurity(&self, counts: &[f64], n: f64, sum: f64, sum_sq: f64) -> f64 {
        if self.task.is_classification() {
            n - counts.iter().map(|c| c * c).sum::<f64>() / n
        } else {
            sum_sq - sum * sum / n
        }
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let mut features = self.rng.sample_indices(self.x.cols, self.mtry);
        features.sort_unstable();
        let classify = self.task.is_classification();
        let n = rows.len();
        let nf = n as f64;

        let mut total_counts = vec![0.0; if classify { self.n_classes } else { 0 }];
        let (mut total_sum, mut total_sq) = (0.0, 0.0);
        for &r in rows {
            let y = self.y[r];
            if classify {
                total_counts[y as usize] += 1.0;
            } else {
                total_sum += y;
                total_sq += y * y;
            }
        }
        let parent = self.weighted_impurity(&total_counts, nf, total_sum, total_sq);

        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        let mut left_counts = vec![0.0; total_counts.len()];
        let mut right_counts = vec![0.0; total_counts.len()];
        for &f in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x.at(r, f), self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            left_counts.iter_mut().for_each(|c| *c = 0.0);
            let (mut lsum, mut lsq) = (0.0, 0.0);
            for i in 0..n - 1 {
                let y = pairs[i].1;
                if classify {
                    left_counts[y as usize] += 1.0;
                } else {
                    lsum += y;
                    lsq += y * y;
                }
                let nl = i + 1;
                if pairs[i].0 == pairs[i + 1].0 || nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let (nlf, nrf) = (nl as f64, (n - nl) as f64);
                let child = if classify {
                    for (rc, (t, l)) in right_counts.iter_mut().zip(total_counts.iter().zip(&left_counts)) {
                        *rc = t - l;
                    }
                    self.weighted_impurity(&left_counts, nlf, 0.0, 0.0)
                        + self.weighted_impurity(&right_counts, nrf, 0.0, 0.0)
                } else {
                    self.weighted_impurity(&[], nlf, lsum, lsq)
                        + self.weighted_impurity(&[], nrf, total_sum - lsum, total_sq - lsq)
                };
                let gain = parent - child;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0),
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * nf.max(1.0))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: Vec::new() });
        let stop = depth >= self.max_depth || rows.len() < 2 * self.min_leaf || self.is_pure(&rows);
        let split = if stop { None } else { self.best_split(&rows) };
        match split {
            None => {
                self.nodes[id] = TreeNode::Leaf {
                    value: self.leaf_value(&rows),
                };
            }
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&row| self.x.at(row, s.feature) <= s.threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    task: Task,
    n_classes: usize,
    n_features: usize,
}

/// Fits a bagged CART forest. Tree `t` uses its own stream derived from
/// `(config.seed, t)` for both its bootstrap sample and split candidates.
pub fn fit_forest(x: Matrix<'_>, y: &[f64], task: Task, n_classes: usize, config: &ForestConfig) -> Result<Forest> {
    if x.rows != y.len() {
        return Err(CapsError::dim("fit_forest", &[x.rows, x.cols], &[y.len()]));
    }
    if x.rows == 0 {
        return Err(CapsError::contract("cannot fit a forest on zero rows"));
    }
    if config.n_trees == 0 {
        return Err(CapsError::Config("forest needs at least one tree".into()));
    }
    if task.is_classification() {
        if y.iter().any(|&v| v < 0.0 || v as usize >= n_classes) {
            return Err(CapsError::contract("class label outside 0..n_classes"));
        }
        let first = y[0];
        if y.iter().all(|&v| v == first) {
            return Err(CapsError::contract("classification target has a single class"));
        }
    }
    let mtry = config.features_per_split(x.cols);
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = SeededRng::new(derive_indexed(config.seed, "tree", t as u64));
            let rows: Vec<usize> = if config.bootstrap {
                (0..x.rows).map(|_| rng.below(x.rows)).collect()
            } else {
                (0..x.rows).collect()
            };
            let mut b = Builder {
                x,
                y,
                task,
                n_classes,
                mtry,
                min_leaf: config.min_samples_leaf.max(1),
                max_depth: config.max_depth.unwrap_or(usize::MAX),
                rng,
                nodes: Vec::new(),
            };
            b.grow(rows, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest {
        trees,
        task,
        n_classes,
        n_features: x.cols,
    })
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Majority vote (ties to the lower class id) or mean of tree outputs.
    pub fn predict(&self, x: Matrix<'_>) -> Result<Vec<f64>> {
        if x.cols != self.n_features {
            return Err(CapsError::dim("predict_forest", &[x.cols], &[self.n_features]));
        }
        let mut votes = vec![0usize; self.n_classes.max(1)];
        Ok((0..x.rows)
            .map(|r| {
                let row = &x.data[r * x.cols..(r + 1) * x.cols];
                if self.task.is_classification() {
                    votes.iter_mut().for_each(|v| *v = 0);
                    for t in &self.trees {
                        votes[t.predict_row(row, self.task) as usize] += 1;
                    }
                    let mut best = 0;
                    for (c, &v) in votes.iter().enumerate() {
                        if v > votes[best] {
                            best = c;
                        }
                    }
                    best as f64
                } else {
                    self.trees.iter().map(|t| t.predict_row(row, self.task)).sum::<f64>() / self.trees.len() as f64
                }
            })
            .collect())
    }

    /// Mean leaf probability of `class` across trees.
    pub fn predict_proba(&self, x: Matrix<'_>, class: usize) -> Result<Vec<f64>> {
        if x.cols != self.n_features || !self.task.is_classification() {
            return Err(CapsError::dim("predict_proba", &[x.cols], &[self.n_features]));
        }
        Ok((0..x.rows)
            .map(|r| {
                let row = &x.data[r * x.cols..(r + 1) * x.cols];
                self.trees.iter().map(|t| t.leaf(row)[class]).sum::<f64>() / self.trees.len() as f64
            })
            .collect())
    }
}
