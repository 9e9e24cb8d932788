use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{CapsError, Result};
use crate::rng::SeededRng;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Wire form used by checkpoints: `name -> {shape, data}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight matrix drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut SeededRng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.add(name, Tensor::from_parts_unchecked(rows, cols, data))
    }

    pub fn add_filled(&mut self, name: &str, len: usize, value: f64) -> ParamId {
        self.add(name, Tensor::filled(&[len], value))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn to_stored(&self) -> BTreeMap<String, StoredTensor> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                (
                    n.clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites every tensor from `stored`, requiring identical names and shapes.
    pub fn load_stored(&mut self, stored: &BTreeMap<String, StoredTensor>) -> Result<()> {
        if stored.len() != self.len() {
            return Err(CapsError::Load {
                what: "parameters".into(),
                msg: format!("expected {} tensors, found {}", self.len(), stored.len()),
            });
        }
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let s = stored.get(name).ok_or_else(|| CapsError::Load {
                what: "parameters".into(),
                msg: format!("missing tensor `{name}`"),
            })?;
            if s.shape != t.shape() {
                return Err(CapsError::Load {
                    what: "parameters".into(),
                    msg: format!("tensor `{name}` has shape {:?}, expected {:?}", s.shape, t.shape()),
                });
            }
            *t = Tensor::new(s.shape.clone(), s.data.clone())?;
        }
        Ok(())
    }
}

/// Lazily registers store tensors on a tape, once each.
pub struct Bound<'p> {
    store: &'p ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'p> Bound<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Bound {
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn var(&mut self, tape: &mut Tape<'p>, id: ParamId) -> Var {
        *self.vars[id.0].get_or_insert_with(|| tape.param(&self.store.tensors[id.0]))
    }

    /// Adds this tape's parameter gradients into `into` (one buffer per parameter).
    pub fn accumulate(&self, grads: &Gradients, into: &mut [Vec<f64>]) {
        for (slot, var) in into.iter_mut().zip(&self.vars) {
            if let Some(g) = var.and_then(|v| grads.get(v)) {
                for (d, s) in slot.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
}
