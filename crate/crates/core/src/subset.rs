use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CapsError, Result};

/// Canonical feature subset: distinct column indices in ascending order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FeatureSubset(Vec<usize>);

impl FeatureSubset {
    /// Canonicalizes any id list (sorts, drops duplicates).
    pub fn from_ids(ids: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        FeatureSubset(v)
    }

    /// Accepts only an already-canonical list.
    pub fn from_sorted(ids: Vec<usize>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CapsError::contract(format!(
                "subset ids not strictly ascending: {ids:?}"
            )));
        }
        Ok(FeatureSubset(ids))
    }

    pub fn all(num_features: usize) -> Self {
        FeatureSubset((0..num_features).collect())
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// Cache key: ids joined by `-`.
    pub fn key(&self) -> String {
        self.0.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
    }

    pub fn check_bound(&self, num_features: usize) -> Result<()> {
        match self.0.last() {
            Some(&max) if max >= num_features => Err(CapsError::Index {
                what: "feature subset",
                index: max,
                bound: num_features,
            }),
            _ => Ok(()),
        }
    }

    /// Ordering used for every "best subset" choice: higher score first, then
    /// fewer features, then lexicographically smaller ids.
    pub fn rank_cmp(a: (&FeatureSubset, f64), b: (&FeatureSubset, f64)) -> std::cmp::Ordering {
        b.1.total_cmp(&a.1)
            .then(a.0.len().cmp(&b.0.len()))
            .then_with(|| a.0.cmp(b.0))
    }
}

impl TryFrom<Vec<usize>> for FeatureSubset {
    type Error = CapsError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        FeatureSubset::from_sorted(v)
    }
}

impl From<FeatureSubset> for Vec<usize> {
    fn from(s: FeatureSubset) -> Self {
        s.0
    }
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{{}}}",
            self.0.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        )
    }
}
