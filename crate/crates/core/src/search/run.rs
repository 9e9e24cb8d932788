use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::config::SearchConfig;
use super::env::{step_environment, SearchState};
use super::policy::{sample_action, PolicyParams};
use super::ppo::{discounted_returns, ppo_update, PpoOptimizer, Transition, UpdateDiagnostics};
use crate::codec::CodecParams;
use crate::error::{CapsError, Result};
use crate::forest::SubsetEvaluator;
use crate::rng::SeededRng;
use crate::subset::FeatureSubset;

pub const SEARCH_LOG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchLogEntry {
    pub seed_index: usize,
    /// 0 for the seed itself, `steps_per_seed + 1` for the deterministic pass.
    pub step: usize,
    pub subset: FeatureSubset,
    pub v: f64,
    pub reward: Option<f64>,
    /// Clip fraction of the most recent policy update, if any.
    pub clip_fraction: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: FeatureSubset,
    pub best_v: f64,
    pub log: Vec<SearchLogEntry>,
    pub updates: Vec<UpdateDiagnostics>,
    pub policy: PolicyParams,
    /// Steps whose decode produced a non-empty subset.
    pub decoded_steps: usize,
}

/// Runs the clipped-surrogate search from every seed with one shared agent.
/// Episodes restart at their seed; an update fires at the end of an episode
/// once `ppo_batch` transitions are pending.
pub fn search(
    seeds: &[FeatureSubset],
    codec: &CodecParams,
    evaluator: &SubsetEvaluator,
    config: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(CapsError::contract("search needs at least one seed subset"));
    }
    if codec.epochs_trained == 0 {
        warn!("searching with an untrained codec");
    }
    let d_features = evaluator.num_features();
    let root = SeededRng::new(seed);
    let mut policy = PolicyParams::init(
        d_features + codec.config().d,
        codec.config().d,
        config.hidden,
        config.init_log_std,
        &mut root.derive("policy-init"),
    );
    let mut opt = PpoOptimizer::new(&policy);
    let mut act_rng = root.derive("actions");
    let mut ppo_rng = root.derive("ppo");

    let mut log = Vec::new();
    let mut updates = Vec::new();
    let mut pending: Vec<Transition> = Vec::new();
    let mut last_clip = None;
    let mut decoded_steps = 0usize;
    let mut starts = Vec::with_capacity(seeds.len());

    for (i, s) in seeds.iter().enumerate() {
        let start = SearchState::new(s.clone(), codec, evaluator)?;
        log.push(SearchLogEntry {
            seed_index: i,
            step: 0,
            subset: s.clone(),
            v: start.v,
            reward: None,
            clip_fraction: last_clip,
        });
        let mut taken = 0;
        while taken < config.steps_per_seed {
            let mut state = start.clone();
            let mut episode: Vec<Transition> = Vec::with_capacity(config.horizon);
            while episode.len() < config.horizon && taken < config.steps_per_seed {
                let value = policy.value(&state.features)?;
                let (delta, log_prob) = sample_action(&state.features, &policy, &mut act_rng, false)?;
                let out = step_environment(&state, &delta, codec, evaluator, config.lambda, config.action_scale)?;
                taken += 1;
                decoded_steps += out.decoded as usize;
                log.push(SearchLogEntry {
                    seed_index: i,
                    step: taken,
                    subset: out.next.subset.clone(),
                    v: out.next.v,
                    reward: Some(out.reward),
                    clip_fraction: last_clip,
                });
                episode.push(Transition {
                    state: std::mem::take(&mut state.features),
                    action: delta,
                    log_prob,
                    reward: out.reward,
                    value,
                    ret: 0.0,
                });
                state = out.next;
            }
            let rewards: Vec<f64> = episode.iter().map(|t| t.reward).collect();
            for (t, g) in episode.iter_mut().zip(discounted_returns(&rewards, config.gamma)) {
                t.ret = g;
            }
            pending.extend(episode);
            if pending.len() >= config.ppo_batch {
                let diag = ppo_update(&pending, &mut policy, &mut opt, config, &mut ppo_rng)?;
                debug!(
                    "update {}: clip {:.3} ratio {:.4} actor {:.4} critic {:.4}",
                    updates.len(),
                    diag.clip_fraction,
                    diag.mean_ratio,
                    diag.actor_loss,
                    diag.critic_loss
                );
                last_clip = Some(diag.clip_fraction);
                updates.push(diag);
                pending.clear();
            }
        }
        starts.push(start);
    }

    for (i, start) in starts.iter().enumerate() {
        let (delta, _) = sample_action(&start.features, &policy, &mut act_rng, true)?;
        let out = step_environment(start, &delta, codec, evaluator, config.lambda, config.action_scale)?;
        decoded_steps += out.decoded as usize;
        log.push(SearchLogEntry {
            seed_index: i,
            step: config.steps_per_seed + 1,
            subset: out.next.subset.clone(),
            v: out.next.v,
            reward: Some(out.reward),
            clip_fraction: last_clip,
        });
    }

    if decoded_steps == 0 {
        warn!("no step decoded to a non-empty subset; falling back to the best seed");
    }
    let best = log
        .iter()
        .min_by(|a, b| FeatureSubset::rank_cmp((&a.subset, a.v), (&b.subset, b.v)))
        .expect("log holds every seed");
    info!(
        "search best {} (v = {:.4}) after {} updates",
        best.subset,
        best.v,
        updates.len()
    );
    Ok(SearchOutcome {
        best: best.subset.clone(),
        best_v: best.v,
        log,
        updates,
        policy,
        decoded_steps,
    })
}

pub fn save_search_log(path: &Path, log: &[SearchLogEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# caps-search-log format_version={SEARCH_LOG_FORMAT_VERSION}")?;
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_search_log(path: &Path) -> Result<Vec<SearchLogEntry>> {
    let file = File::open(path).map_err(|e| CapsError::Load {
        what: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(text).map_err(|e| CapsError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
