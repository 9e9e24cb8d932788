use crate::codec::{CodecParams, SubsetEmbedding};
use crate::data::one_hot_rep;
use crate::diff::Tensor;
use crate::error::{CapsError, Result};
use crate::forest::SubsetEvaluator;
use crate::subset::FeatureSubset;

use super::ppo::compute_reward;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    /// One-hot subset (length D) followed by the embedding's column mean.
    pub features: Vec<f64>,
    pub subset: FeatureSubset,
    pub embedding: SubsetEmbedding,
    pub v: f64,
}

impl SearchState {
    /// Encodes `subset` in ascending id order and scores it.
    pub fn new(subset: FeatureSubset, codec: &CodecParams, evaluator: &SubsetEvaluator) -> Result<Self> {
        let v = evaluator.evaluate(&subset)?;
        Self::with_score(subset, v, codec, evaluator.num_features())
    }

    pub fn with_score(subset: FeatureSubset, v: f64, codec: &CodecParams, num_features: usize) -> Result<Self> {
        let embedding = codec.encode(subset.ids())?;
        let mut features = one_hot_rep(&subset, num_features)?;
        features.extend(embedding.mean_row());
        Ok(SearchState {
            features,
            subset,
            embedding,
            v,
        })
    }
}

/// `E + alpha * delta` with `delta` added to every row.
pub fn apply_action(e: &Tensor, delta: &[f64], alpha: f64) -> Result<Tensor> {
    if delta.len() != e.cols() {
        return Err(CapsError::dim("apply_action", e.shape(), &[delta.len()]));
    }
    let mut out = e.clone();
    for row in out.data_mut().chunks_mut(delta.len()) {
        for (x, d) in row.iter_mut().zip(delta) {
            *x += alpha * d;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next: SearchState,
    pub reward: f64,
    /// False when every decoder slot was padding and the state was kept.
    pub decoded: bool,
}

/// Perturbs the embedding, decodes a candidate, scores it and re-encodes it.
pub fn step_environment(
    state: &SearchState,
    delta: &[f64],
    codec: &CodecParams,
    evaluator: &SubsetEvaluator,
    lambda: f64,
    alpha: f64,
) -> Result<StepOutcome> {
    let e_plus = apply_action(&state.embedding.rows, delta, alpha)?;
    match codec.decode(&e_plus) {
        Err(CapsError::EmptyDecode) => Ok(StepOutcome {
            next: state.clone(),
            reward: -lambda,
            decoded: false,
        }),
        Err(e) => Err(e),
        Ok(candidate) => {
            let v = evaluator.evaluate(&candidate)?;
            let d = evaluator.num_features();
            let reward = compute_reward(v, state.v, candidate.len(), d, lambda)?;
            Ok(StepOutcome {
                next: SearchState::with_score(candidate, v, codec, d)?,
                reward,
                decoded: true,
            })
        }
    }
}
