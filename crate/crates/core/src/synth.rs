//! Seeded synthetic datasets with known informative columns.

use crate::data::{Dataset, Task};
use crate::error::Result;
use crate::rng::SeededRng;

/// Recipe for a classification table whose label depends on the signs of a
/// few planted columns.
#[derive(Clone, Debug)]
pub struct PlantedSpec {
    pub rows: usize,
    pub features: usize,
    /// Columns whose signs determine the label.
    pub informative: Vec<usize>,
    /// `(target, source, noise_std)`: `target` is a noisy copy of `source`.
    pub redundant: Vec<(usize, usize, f64)>,
    /// Probability of replacing a label with a uniformly random class.
    pub label_noise: f64,
    pub task: Task,
    pub seed: u64,
}

/// Binary: majority vote of `x_j > 0` over the informative columns.
/// Multiclass: the sign pattern of the informative columns read as a binary
/// number (so `2^k` classes).
pub fn planted(spec: &PlantedSpec) -> Result<Dataset> {
    let mut rng = SeededRng::new(spec.seed);
    let k = spec.informative.len();
    let n_classes = match spec.task {
        Task::Binary => 2,
        _ => 1usize << k,
    };
    let mut rows = Vec::with_capacity(spec.rows);
    let mut y = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let mut row: Vec<f64> = (0..spec.features).map(|_| rng.normal()).collect();
        for &(target, source, std) in &spec.redundant {
            row[target] = row[source] + std * rng.normal();
        }
        let bits: Vec<bool> = spec.informative.iter().map(|&j| row[j] > 0.0).collect();
        let mut label = match spec.task {
            Task::Binary => (2 * bits.iter().filter(|&&b| b).count() > k) as usize,
            _ => bits.iter().fold(0, |acc, &b| acc * 2 + b as usize),
        };
        if rng.bernoulli(spec.label_noise) {
            label = rng.below(n_classes);
        }
        rows.push(row.iter().map(|v| (v * 1e4).round() / 1e4).collect());
        y.push(label as f64);
    }
    let names = (0..spec.features).map(|j| format!("f{j}")).collect();
    Dataset::new(rows, y, names, spec.task)
}

/// About 300 x 20 binary table: label from columns {1, 4, 9}, with noisy
/// copies in 12..=14.
pub fn smoke_binary(seed: u64) -> Result<Dataset> {
    planted(&PlantedSpec {
        rows: 300,
        features: 20,
        informative: vec![1, 4, 9],
        redundant: vec![(12, 1, 0.5), (13, 4, 0.5), (14, 9, 0.5)],
        label_noise: 0.05,
        task: Task::Binary,
        seed,
    })
}

/// About 1000 x 40 four-class table: classes from the signs of columns 3
/// and 17, with noisy copies in 30 and 31.
pub fn smoke_multiclass(seed: u64) -> Result<Dataset> {
    planted(&PlantedSpec {
        rows: 1000,
        features: 40,
        informative: vec![3, 17],
        redundant: vec![(30, 3, 0.4), (31, 17, 0.4)],
        label_noise: 0.05,
        task: Task::Multiclass,
        seed,
    })
}

/// 12-column binary table whose best 3-column subset is `informative`.
pub fn planted_three_of_twelve(informative: [usize; 3], seed: u64) -> Result<Dataset> {
    planted(&PlantedSpec {
        rows: 200,
        features: 12,
        informative: informative.to_vec(),
        redundant: Vec::new(),
        label_noise: 0.0,
        task: Task::Binary,
        seed,
    })
}
