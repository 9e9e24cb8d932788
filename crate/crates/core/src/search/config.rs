use serde::{Deserialize, Serialize};

use crate::error::{CapsError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Weight of the performance term in the reward; `1 - lambda` weighs brevity.
    pub lambda: f64,
    pub gamma: f64,
    pub clip_eps: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub steps_per_seed: usize,
    pub ppo_batch: usize,
    pub ppo_epochs: usize,
    pub horizon: usize,
    pub action_scale: f64,
    pub init_log_std: f64,
    /// Hidden widths shared by actor and critic.
    pub hidden: [usize; 2],
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda: 0.1,
            gamma: 0.99,
            clip_eps: 0.2,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            steps_per_seed: 1000,
            ppo_batch: 512,
            ppo_epochs: 10,
            horizon: 50,
            action_scale: 0.05,
            init_log_std: -1.0,
            hidden: [128, 128],
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CapsError::Config(format!("search: {m}")));
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("lambda must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.clip_eps <= 0.0 {
            return bad("clip_eps must be positive");
        }
        if self.horizon == 0 || (self.steps_per_seed > 0 && self.horizon > self.steps_per_seed) {
            return bad("horizon must be in 1..=steps_per_seed");
        }
        if self.ppo_batch == 0 || self.ppo_epochs == 0 {
            return bad("ppo_batch and ppo_epochs must be positive");
        }
        if self.lr_actor <= 0.0 || self.lr_critic <= 0.0 || self.action_scale < 0.0 {
            return bad("learning rates must be positive and action_scale non-negative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}
