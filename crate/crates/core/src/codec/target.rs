use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{CapsError, Result};
use crate::subset::FeatureSubset;

/// Per-slot reconstruction target: the sorted subset followed by padding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSequence {
    slots: Vec<usize>,
}

impl TargetSequence {
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

pub fn make_target(subset: &FeatureSubset, max_len: usize, pad_id: usize) -> Result<TargetSequence> {
    if subset.is_empty() {
        return Err(CapsError::contract("cannot build a target for an empty subset"));
    }
    if subset.len() > max_len {
        return Err(CapsError::contract(format!(
            "subset of size {} exceeds max_len {max_len}",
            subset.len()
        )));
    }
    subset.check_bound(pad_id)?;
    let mut slots = subset.ids().to_vec();
    slots.resize(max_len, pad_id);
    Ok(TargetSequence { slots })
}

/// Greedy per-slot decoding: argmax (lowest id on ties), drop padding,
/// keep first occurrences, sort.
pub fn logits_to_subset(logits: &Tensor, pad_id: usize) -> Result<FeatureSubset> {
    let mut ids = Vec::new();
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best != pad_id && !ids.contains(&best) {
            ids.push(best);
        }
    }
    if ids.is_empty() {
        return Err(CapsError::EmptyDecode);
    }
    Ok(FeatureSubset::from_ids(ids))
}
