use serde::{Deserialize, Serialize};

use crate::error::{CapsError, Result};

/// Shape and training settings of the subset codec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Number of features `D` in the dataset; the padding token is `D`.
    pub num_features: usize,
    /// Embedding width.
    pub d: usize,
    pub heads: usize,
    /// Inducing points per induced-attention block.
    pub inducing: usize,
    /// Maximum subset length; also the number of pooling seeds / output slots.
    /// `0` means "use `num_features`".
    pub max_len: usize,
    /// Hidden width of the row-wise feed-forward layers; `0` means `2 * d`.
    pub rff_hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            num_features: 0,
            d: 128,
            heads: 4,
            inducing: 32,
            max_len: 0,
            rff_hidden: 0,
            lr: 0.001,
            batch_size: 64,
            epochs: 100,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn for_features(num_features: usize) -> Self {
        CodecConfig {
            num_features,
            ..Default::default()
        }
        .resolved()
    }

    /// Fills the "derived from other fields" defaults.
    pub fn resolved(mut self) -> Self {
        if self.max_len == 0 {
            self.max_len = self.num_features;
        }
        if self.rff_hidden == 0 {
            self.rff_hidden = 2 * self.d;
        }
        self
    }

    pub fn pad_id(&self) -> usize {
        self.num_features
    }

    pub fn vocab(&self) -> usize {
        self.num_features + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CapsError::Config(format!("codec: {m}")));
        if self.num_features < 1 {
            return bad("num_features must be >= 1");
        }
        if self.heads == 0 || self.d == 0 || !self.d.is_multiple_of(self.heads) {
            return bad("d must be a positive multiple of heads");
        }
        if self.d < 2 {
            return bad("d must be >= 2 for layer normalization");
        }
        if self.inducing < 1 {
            return bad("inducing point count must be >= 1");
        }
        if self.max_len < 1 {
            return bad("max_len must be >= 1");
        }
        if self.rff_hidden < 1 {
            return bad("rff_hidden must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("lr must be positive");
        }
        Ok(())
    }
}
