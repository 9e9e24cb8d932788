//! Clipped-surrogate actor-critic search over subset embeddings.

mod config;
mod env;
mod policy;
mod ppo;
mod run;

pub use config::SearchConfig;
pub use env::{apply_action, step_environment, SearchState, StepOutcome};
pub use policy::{gaussian_log_prob, sample_action, MlpIds, PolicyParams, LOG_STD_MAX, LOG_STD_MIN};
pub use ppo::{
    actor_loss, actor_loss_graph, clip, compute_reward, critic_loss, critic_loss_graph, discounted_returns,
    normalize_advantages, ppo_update, surrogate, PpoOptimizer, Transition, UpdateDiagnostics,
};
pub use run::{load_search_log, save_search_log, search, SearchLogEntry, SearchOutcome, SEARCH_LOG_FORMAT_VERSION};
