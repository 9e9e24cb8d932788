//! Downstream scores. Labels are passed as `f64`; classification labels are
//! integral class ids.

use serde::{Deserialize, Serialize};

use crate::error::{CapsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CapsError::dim("metric", &[a.len()], &[b.len()]));
    }
    if a.is_empty() {
        return Err(CapsError::contract("metric over zero samples"));
    }
    Ok(())
}

/// Zero denominators yield 0 for the affected quantity.
pub fn f1_binary(y_true: &[f64], y_pred: &[f64], positive_class: f64) -> Result<BinaryScores> {
    same_len(y_true, y_pred)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == positive_class, p == positive_class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BinaryScores { precision, recall, f1 })
}

/// Global `TP / (TP + (FP + FN) / 2)`; equals accuracy for single-label data.
pub fn micro_f1(y_true: &[f64], y_pred: &[f64], n_classes: usize) -> Result<f64> {
    same_len(y_true, y_pred)?;
    let mut tp = 0usize;
    let mut errors = 0usize;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for v in [t, p] {
            if v < 0.0 || v as usize >= n_classes {
                return Err(CapsError::Index {
                    what: "class label",
                    index: v as usize,
                    bound: n_classes,
                });
            }
        }
        if t == p {
            tp += 1;
        } else {
            errors += 1;
        }
    }
    // each error is one FP (for the predicted class) and one FN (for the true class)
    let (fp, fn_) = (errors as f64, errors as f64);
    Ok(tp as f64 / (tp as f64 + 0.5 * (fp + fn_)))
}

/// `1 - sum|y - yhat| / sum|y - mean(y)|`, unclipped.
pub fn one_minus_rae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    same_len(y_true, y_pred)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let den: f64 = y_true.iter().map(|y| (y - mean).abs()).sum();
    if den == 0.0 {
        return Err(CapsError::contract("1-RAE is undefined for a constant target"));
    }
    let num: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum();
    Ok(1.0 - num / den)
}

pub fn accuracy(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    same_len(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Secondary regression scores, reported but never used for selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionScores {
    pub one_minus_mae: f64,
    pub one_minus_mse: f64,
    pub one_minus_rmse: f64,
}

pub fn regression_scores(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionScores> {
    same_len(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let mae = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mse = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    Ok(RegressionScores {
        one_minus_mae: 1.0 - mae,
        one_minus_mse: 1.0 - mse,
        one_minus_rmse: 1.0 - mse.sqrt(),
    })
}

/// Area under the ROC curve from hard or soft scores for the positive class
/// (Mann-Whitney form, ties counted as one half).
pub fn roc_auc(y_true: &[f64], scores: &[f64], positive_class: f64) -> Result<f64> {
    same_len(y_true, scores)?;
    let pos: Vec<f64> = y_true
        .iter()
        .zip(scores)
        .filter(|(t, _)| **t == positive_class)
        .map(|(_, s)| *s)
        .collect();
    let neg: Vec<f64> = y_true
        .iter()
        .zip(scores)
        .filter(|(t, _)| **t != positive_class)
        .map(|(_, s)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(CapsError::contract("AUC needs both classes present"));
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}
