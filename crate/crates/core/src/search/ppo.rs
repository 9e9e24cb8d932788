//! Reward, returns, clipped-surrogate losses and the minibatch update.

use serde::{Deserialize, Serialize};

use super::config::SearchConfig;
use super::policy::{log_prob_graph, PolicyParams};
use crate::diff::{AdamState, Bound, Tape, Tensor, Var};
use crate::error::{CapsError, Result};
use crate::rng::SeededRng;

/// `lambda * (v_new - v_old) + (1 - lambda) * (1 - len / D)`.
pub fn compute_reward(v_new: f64, v_old: f64, subset_len: usize, num_features: usize, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v_new) || !(0.0..=1.0).contains(&v_old) {
        return Err(CapsError::contract(format!(
            "scores must lie in [0, 1], got {v_new} and {v_old}"
        )));
    }
    if subset_len == 0 || subset_len > num_features {
        return Err(CapsError::contract(format!(
            "subset length {subset_len} outside 1..={num_features}"
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CapsError::contract(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(lambda * (v_new - v_old) + (1.0 - lambda) * (1.0 - subset_len as f64 / num_features as f64))
}

/// Backward recurrence `G_t = R_t + gamma * G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.clamp(lo, hi)
}

pub fn critic_loss(values: &[f64], returns: &[f64]) -> Result<f64> {
    if values.len() != returns.len() || values.is_empty() {
        return Err(CapsError::dim("critic_loss", &[values.len()], &[returns.len()]));
    }
    Ok(values.iter().zip(returns).map(|(v, g)| (v - g) * (v - g)).sum::<f64>() / values.len() as f64)
}

/// Zero mean, unit (population) variance; a constant batch maps to zeros.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Per-sample `(r * A, min(r * A, clip(r) * A))`.
pub fn surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> (f64, f64) {
    let plain = ratio * advantage;
    let clipped = clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    (plain, plain.min(clipped))
}

/// `-mean(min(r A, clip(r) A))` with `r = exp(new - old)`; advantages are
/// normalized inside.
pub fn actor_loss(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], clip_eps: f64) -> Result<f64> {
    let n = new_log_probs.len();
    if n == 0 || old_log_probs.len() != n || advantages.len() != n {
        return Err(CapsError::dim(
            "actor_loss",
            &[n, old_log_probs.len()],
            &[advantages.len()],
        ));
    }
    let adv = normalize_advantages(advantages);
    let total: f64 = (0..n)
        .map(|i| surrogate((new_log_probs[i] - old_log_probs[i]).exp(), adv[i], clip_eps).1)
        .sum();
    Ok(-total / n as f64)
}

/// Tape form of [`actor_loss`]; `old` and `adv` (already normalized) are
/// constants, `new_lp` is `B x 1`.
pub fn actor_loss_graph(tape: &mut Tape<'_>, new_lp: Var, old_lp: &[f64], adv: &[f64], clip_eps: f64) -> Result<Var> {
    let b = old_lp.len();
    let old = tape.constant(Tensor::matrix(b, 1, old_lp.to_vec())?);
    let a = tape.constant(Tensor::matrix(b, 1, adv.to_vec())?);
    let diff = tape.sub(new_lp, old)?;
    let ratio = tape.exp(diff);
    let plain = tape.mul(ratio, a)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    let clipped = tape.mul(clipped_ratio, a)?;
    let obj = tape.minimum(plain, clipped)?;
    let m = tape.mean(obj);
    Ok(tape.scale(m, -1.0))
}

/// Tape form of [`critic_loss`]; `values` is `B x 1`.
pub fn critic_loss_graph(tape: &mut Tape<'_>, values: Var, returns: &[f64]) -> Result<Var> {
    let g = tape.constant(Tensor::matrix(returns.len(), 1, returns.to_vec())?);
    let d = tape.sub(values, g)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// One environment step with everything the update needs.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub ret: f64,
}

impl Transition {
    /// `G - V(s)`.
    pub fn advantage(&self) -> f64 {
        self.ret - self.value
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub samples: usize,
    pub minibatches: usize,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Samples whose clipped objective exceeded `r * A`, or differed from it
    /// while `r` was inside the clip range. Always zero for a correct update.
    pub bound_violations: usize,
}

pub struct PpoOptimizer {
    actor: AdamState,
    critic: AdamState,
}

impl PpoOptimizer {
    pub fn new(policy: &PolicyParams) -> Self {
        PpoOptimizer {
            actor: AdamState::new(&policy.actor),
            critic: AdamState::new(&policy.critic),
        }
    }
}

fn state_matrix(batch: &[&Transition], width: usize) -> Result<Tensor> {
    Tensor::matrix(
        batch.len(),
        width,
        batch.iter().flat_map(|t| t.state.iter().copied()).collect(),
    )
}

/// `ppo_epochs` passes over shuffled minibatches of `ppo_batch` transitions,
/// with an Adam step on each loss per minibatch.
pub fn ppo_update(
    transitions: &[Transition],
    policy: &mut PolicyParams,
    opt: &mut PpoOptimizer,
    config: &SearchConfig,
    rng: &mut SeededRng,
) -> Result<UpdateDiagnostics> {
    if transitions.len() < config.ppo_batch {
        return Err(CapsError::contract(format!(
            "ppo_update needs {} transitions, got {}",
            config.ppo_batch,
            transitions.len()
        )));
    }
    let (sd, ad) = (policy.state_dim(), policy.action_dim());
    let eps = config.clip_eps;
    let mut diag = UpdateDiagnostics::default();
    let (mut ratio_sum, mut clipped, mut actor_sum, mut critic_sum) = (0.0, 0usize, 0.0, 0.0);
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    for _ in 0..config.ppo_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.ppo_batch) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &transitions[i]).collect();
            let b = batch.len();
            let states = state_matrix(&batch, sd)?;
            let old: Vec<f64> = batch.iter().map(|t| t.log_prob).collect();
            let adv = normalize_advantages(&batch.iter().map(|t| t.advantage()).collect::<Vec<_>>());
            let returns: Vec<f64> = batch.iter().map(|t| t.ret).collect();

            let actor_grads = {
                let mut tape = Tape::new();
                let mut bound = Bound::new(&policy.actor);
                let s = tape.constant(states.clone());
                let a = tape.constant(Tensor::matrix(
                    b,
                    ad,
                    batch.iter().flat_map(|t| t.action.iter().copied()).collect(),
                )?);
                let lp = log_prob_graph(&mut tape, &mut bound, policy, s, a)?;
                for (i, (&new, &o)) in tape.value(lp).data().iter().zip(&old).enumerate() {
                    let r = (new - o).exp();
                    ratio_sum += r;
                    if (r - 1.0).abs() > eps {
                        clipped += 1;
                    }
                    let (plain, obj) = surrogate(r, adv[i], eps);
                    let inside = (1.0 - eps..=1.0 + eps).contains(&r);
                    if obj > plain || (inside && obj != plain) {
                        diag.bound_violations += 1;
                    }
                }
                let loss = actor_loss_graph(&mut tape, lp, &old, &adv, eps)?;
                actor_sum += tape.value(loss).item();
                let g = tape.backward(loss)?;
                let mut buf = policy.actor.zeros_like();
                bound.accumulate(&g, &mut buf);
                buf
            };
            opt.actor.step(&mut policy.actor, &actor_grads, config.lr_actor)?;
            policy.clamp_log_std();

            let critic_grads = {
                let mut tape = Tape::new();
                let mut bound = Bound::new(&policy.critic);
                let s = tape.constant(states);
                let v = policy.critic_ids.forward(&mut tape, &mut bound, s)?;
                let loss = critic_loss_graph(&mut tape, v, &returns)?;
                critic_sum += tape.value(loss).item();
                let g = tape.backward(loss)?;
                let mut buf = policy.critic.zeros_like();
                bound.accumulate(&g, &mut buf);
                buf
            };
            opt.critic.step(&mut policy.critic, &critic_grads, config.lr_critic)?;

            diag.samples += b;
            diag.minibatches += 1;
        }
    }
    diag.mean_ratio = ratio_sum / diag.samples as f64;
    diag.clip_fraction = clipped as f64 / diag.samples as f64;
    diag.actor_loss = actor_sum / diag.minibatches as f64;
    diag.critic_loss = critic_sum / diag.minibatches as f64;
    Ok(diag)
}
