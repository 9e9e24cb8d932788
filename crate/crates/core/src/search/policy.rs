//! Gaussian actor and scalar critic.

use std::f64::consts::PI;

use crate::diff::{affine, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{CapsError, Result};
use crate::rng::SeededRng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct MlpIds {
    pub layers: [(ParamId, ParamId); 3],
}

impl MlpIds {
    fn new(store: &mut ParamStore, prefix: &str, widths: [usize; 4], rng: &mut SeededRng) -> Self {
        let mut layer = |i: usize| {
            let w = store.add_glorot(&format!("{prefix}.w{i}"), widths[i], widths[i + 1], rng);
            let b = store.add_filled(&format!("{prefix}.b{i}"), widths[i + 1], 0.0);
            (w, b)
        };
        MlpIds {
            layers: [layer(0), layer(1), layer(2)],
        }
    }

    /// Two ReLU hidden layers and a linear output.
    pub fn forward<'p>(&self, tape: &mut Tape<'p>, bound: &mut Bound<'p>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (bound.var(tape, w), bound.var(tape, b));
            h = affine(tape, h, w, b)?;
            if i < 2 {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Actor and critic live in separate stores so they never share parameters
/// and each gets its own optimizer.
#[derive(Clone, Debug)]
pub struct PolicyParams {
    pub actor: ParamStore,
    pub actor_ids: MlpIds,
    pub log_std: ParamId,
    pub critic: ParamStore,
    pub critic_ids: MlpIds,
    state_dim: usize,
    action_dim: usize,
}

impl PolicyParams {
    pub fn init(
        state_dim: usize,
        action_dim: usize,
        hidden: [usize; 2],
        init_log_std: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let mut actor = ParamStore::new();
        let actor_ids = MlpIds::new(&mut actor, "actor", [state_dim, hidden[0], hidden[1], action_dim], rng);
        let log_std = actor.add_filled(
            "actor.log_std",
            action_dim,
            init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
        );
        let mut critic = ParamStore::new();
        let critic_ids = MlpIds::new(&mut critic, "critic", [state_dim, hidden[0], hidden[1], 1], rng);
        PolicyParams {
            actor,
            actor_ids,
            log_std,
            critic,
            critic_ids,
            state_dim,
            action_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.actor
            .get(self.log_std)
            .data()
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    pub fn set_log_std(&mut self, values: &[f64]) -> Result<()> {
        let t = self.actor.get_mut(self.log_std);
        if values.len() != t.len() {
            return Err(CapsError::dim("set_log_std", &[values.len()], t.shape()));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// Keeps stored log-std entries inside their clamp range.
    pub(crate) fn clamp_log_std(&mut self) {
        for v in self.actor.get_mut(self.log_std).data_mut() {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(CapsError::dim("policy state", &[state.len()], &[self.state_dim]));
        }
        Ok(())
    }

    pub fn action_mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut tape = Tape::new();
        let mut bound = Bound::new(&self.actor);
        let x = tape.constant(Tensor::matrix(1, self.state_dim, state.to_vec())?);
        let mu = self.actor_ids.forward(&mut tape, &mut bound, x)?;
        Ok(tape.value(mu).data().to_vec())
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        self.check_state(state)?;
        let mut tape = Tape::new();
        let mut bound = Bound::new(&self.critic);
        let x = tape.constant(Tensor::matrix(1, self.state_dim, state.to_vec())?);
        let v = self.critic_ids.forward(&mut tape, &mut bound, x)?;
        Ok(tape.value(v).item())
    }
}

/// Exact diagonal-Gaussian log density.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Draws `delta ~ N(mu(state), exp(log_std)^2)`, or returns `mu` when
/// `deterministic`. Returns the action and its log density.
pub fn sample_action(
    state: &[f64],
    policy: &PolicyParams,
    rng: &mut SeededRng,
    deterministic: bool,
) -> Result<(Vec<f64>, f64)> {
    let mu = policy.action_mean(state)?;
    let ls = policy.log_std();
    let delta: Vec<f64> = if deterministic {
        mu.clone()
    } else {
        mu.iter().zip(&ls).map(|(m, s)| m + s.exp() * rng.normal()).collect()
    };
    let lp = gaussian_log_prob(&delta, &mu, &ls);
    Ok((delta, lp))
}

/// Batched log density on a tape: `actions` is `B x d`, returns `B x 1`.
pub(crate) fn log_prob_graph<'p>(
    tape: &mut Tape<'p>,
    bound: &mut Bound<'p>,
    policy: &'p PolicyParams,
    states: Var,
    actions: Var,
) -> Result<Var> {
    let mu = policy.actor_ids.forward(tape, bound, states)?;
    let raw = bound.var(tape, policy.log_std);
    let ls = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
    let neg_ls = tape.scale(ls, -1.0);
    let inv_sigma = tape.exp(neg_ls);
    let diff = tape.sub(actions, mu)?;
    let z = tape.mul_row(diff, inv_sigma)?;
    let z2 = tape.square(z);
    let quad = tape.row_sums(z2);
    let half = tape.scale(quad, -0.5);
    let ls_sum = tape.sum(ls);
    let neg_ls_sum = tape.scale(ls_sum, -1.0);
    let lp = tape.add_row(half, neg_ls_sum)?;
    Ok(tape.add_scalar(lp, -0.5 * policy.action_dim as f64 * (2.0 * PI).ln()))
}
