//! Critic and actor objectives with their analytic gradients, and the
//! optimizer steps built on them.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{bs_groups, ue_groups, AgentSet, Batch};
use crate::config::SimConfig;
use crate::error::NeuralError;
use crate::neural::{
    adam_step, greedy_batch, gumbel_soft_batch, sample_gumbel_noise, softmax_backward_batch,
    MlpGrads, MlpParams,
};

/// UE order seen from UE `ego`: itself first, then the others cyclically.
pub(crate) fn view_order(n: usize, ego: usize) -> Vec<usize> {
    (0..n).map(|j| (ego + j) % n).collect()
}

fn assemble(
    ue_states: &[ArrayView2<f64>],
    bs_state: ArrayView2<f64>,
    ue_actions: &[ArrayView2<f64>],
    bs_action: ArrayView2<f64>,
) -> Array2<f64> {
    let mut parts = Vec::with_capacity(2 * ue_states.len() + 2);
    parts.extend_from_slice(ue_states);
    parts.push(bs_state);
    parts.extend_from_slice(ue_actions);
    parts.push(bs_action);
    concatenate(Axis(1), &parts).expect("critic input blocks share a row count")
}

fn pick<'a>(blocks: &'a [Array2<f64>], order: &[usize]) -> Vec<ArrayView2<'a, f64>> {
    order.iter().map(|&j| blocks[j].view()).collect()
}

/// First column of the critic input holding the acting agent's action:
/// UE slot 0, or the BS block.
fn action_column(config: &SimConfig, ue_slot: Option<usize>) -> usize {
    let states = config.n_ue * config.ue_state_dim() + config.bs_state_dim();
    match ue_slot {
        Some(slot) => states + slot * config.ue_action_dim(),
        None => states + config.n_ue * config.ue_action_dim(),
    }
}

/// Temporal-difference targets `r + gamma * (1 - terminal) * Q'(x', a')`
/// with `a'` the greedy actions of the target actors on successor states.
/// Returns one target vector per UE view and one for the BS critic.
pub fn td_targets(agents: &AgentSet, batch: &Batch, gamma: f64) -> (Vec<Array1<f64>>, Array1<f64>) {
    let config = &agents.config;
    let n = config.n_ue;
    let (ue_g, bs_g) = (ue_groups(config), bs_groups(config));
    let next_ue_actions: Vec<Array2<f64>> = batch
        .next_ue_states
        .iter()
        .map(|s| {
            let logits = agents.ue_actor.target.forward_batch(s.view()).output;
            greedy_batch(logits.view(), &ue_g)
        })
        .collect();
    let logits = agents
        .bs_actor
        .target
        .forward_batch(batch.next_bs_state.view())
        .output;
    let next_dcm = greedy_batch(logits.view(), &bs_g);
    let discount = batch.terminal.mapv(|t| gamma * (1.0 - t));
    let target = |critic: &MlpParams, order: &[usize]| {
        let x = assemble(
            &pick(&batch.next_ue_states, order),
            batch.bs_state.view(),
            &pick(&next_ue_actions, order),
            next_dcm.view(),
        );
        let q = critic.forward_batch(x.view()).output.column(0).to_owned();
        &batch.reward + &(&discount * &q)
    };
    let ue = (0..n)
        .map(|i| target(&agents.ue_critic.target, &view_order(n, i)))
        .collect();
    let canonical: Vec<usize> = (0..n).collect();
    let bs = target(&agents.bs_critic.target, &canonical);
    (ue, bs)
}

/// Critic losses before any step, and their gradients.
#[derive(Clone, Debug)]
pub struct CriticEval {
    /// Mean over UE views of the mean squared TD error.
    pub ue_loss: f64,
    pub bs_loss: f64,
    pub ue_grads: MlpGrads,
    pub bs_grads: MlpGrads,
}

/// Mean squared error of `critic(x)` against `y`, and `weight` times its gradient.
fn mse(critic: &MlpParams, x: &Array2<f64>, y: &Array1<f64>, weight: f64) -> (f64, MlpGrads) {
    let cache = critic.forward_batch(x.view());
    let b = y.len() as f64;
    let delta = &cache.output.column(0) - y;
    let loss = delta.iter().map(|d| d * d).sum::<f64>() / b;
    let grad = (delta * (2.0 * weight / b)).insert_axis(Axis(1));
    let (grads, _) = critic.backward_batch(&cache, grad.view(), false);
    (loss, grads)
}

pub fn critic_losses_and_grads(agents: &AgentSet, batch: &Batch, gamma: f64) -> CriticEval {
    let n = agents.config.n_ue;
    let (ue_targets, bs_target) = td_targets(agents, batch, gamma);
    let critic = &agents.ue_critic.online;
    let mut ue_loss = 0.0;
    let mut ue_grads = critic.zeros_like();
    for (i, y) in ue_targets.iter().enumerate() {
        let order = view_order(n, i);
        let x = assemble(
            &pick(&batch.ue_states, &order),
            batch.bs_prev.view(),
            &pick(&batch.ue_actions, &order),
            batch.dcm.view(),
        );
        let (loss, grads) = mse(critic, &x, y, 1.0 / n as f64);
        ue_loss += loss / n as f64;
        ue_grads.add_assign(&grads);
    }
    let canonical: Vec<usize> = (0..n).collect();
    let x = assemble(
        &pick(&batch.ue_states, &canonical),
        batch.bs_prev.view(),
        &pick(&batch.ue_actions, &canonical),
        batch.dcm.view(),
    );
    let (bs_loss, bs_grads) = mse(&agents.bs_critic.online, &x, &bs_target, 1.0);
    CriticEval {
        ue_loss,
        bs_loss,
        ue_grads,
        bs_grads,
    }
}

/// One Adam step on each online critic. Returns the pre-step losses
/// `(ue, bs)`.
pub fn critic_update(
    agents: &mut AgentSet,
    batch: &Batch,
    gamma: f64,
) -> Result<(f64, f64), NeuralError> {
    let eval = critic_losses_and_grads(agents, batch, gamma);
    let lr = agents.train.learning_rate;
    let ue = &mut agents.ue_critic;
    adam_step(&mut ue.online, &eval.ue_grads, &mut ue.adam, lr)?;
    let bs = &mut agents.bs_critic;
    adam_step(&mut bs.online, &eval.bs_grads, &mut bs.adam, lr)?;
    Ok((eval.ue_loss, eval.bs_loss))
}

/// Gumbel noise for the relaxed actions of one actor update, one row per
/// batch row. `ue[i]` feeds UE `i`'s view.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorNoise {
    pub ue: Vec<Array2<f64>>,
    pub bs: Array2<f64>,
}

impl ActorNoise {
    pub fn sample<R: Rng + ?Sized>(config: &SimConfig, rows: usize, rng: &mut R) -> Self {
        let mut block = |width: usize| {
            Array2::from_shape_vec((rows, width), sample_gumbel_noise(rows * width, rng))
                .expect("noise block shape")
        };
        Self {
            ue: (0..config.n_ue)
                .map(|_| block(config.ue_action_dim()))
                .collect(),
            bs: block(config.bs_action_dim()),
        }
    }
}

/// Minimized actor objectives `-mean Q + policy_reg * mean(logits^2)` and
/// their gradients.
#[derive(Clone, Debug)]
pub struct ActorEval {
    /// Mean over UE views.
    pub ue_objective: f64,
    pub bs_objective: f64,
    pub ue_grads: MlpGrads,
    pub bs_grads: MlpGrads,
}

/// Objective and actor gradient for one acting agent. The agent's action
/// block is replaced by its relaxed sample; every other block comes from
/// the batch.
#[allow(clippy::too_many_arguments)]
fn actor_term(
    agents: &AgentSet,
    actor: &MlpParams,
    critic: &MlpParams,
    actor_input: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    groups: &crate::neural::LogitGroups,
    column: usize,
    build: impl Fn(ArrayView2<f64>) -> Array2<f64>,
) -> (f64, MlpGrads) {
    let lambda = agents.train.policy_reg;
    let temp = agents.train.gumbel_temperature;
    let cache_a = actor.forward_batch(actor_input);
    let logits = &cache_a.output;
    let soft = gumbel_soft_batch(logits.view(), noise, groups, temp);
    let x = build(soft.view());
    let cache_c = critic.forward_batch(x.view());
    let b = logits.nrows() as f64;
    let entries = logits.len() as f64;
    let objective =
        -cache_c.output.sum() / b + lambda * logits.iter().map(|l| l * l).sum::<f64>() / entries;

    let dq = Array2::from_elem((logits.nrows(), 1), -1.0 / b);
    let (_, dx) = critic.backward_batch(&cache_c, dq.view(), true);
    let dx = dx.expect("input gradient requested");
    let width = logits.ncols();
    let d_soft = dx.slice(s![.., column..column + width]);
    let mut d_logits = softmax_backward_batch(soft.view(), d_soft, groups, temp);
    d_logits.scaled_add(2.0 * lambda / entries, logits);
    let (grads, _) = actor.backward_batch(&cache_a, d_logits.view(), false);
    (objective, grads)
}

pub fn actor_objectives_and_grads(
    agents: &AgentSet,
    batch: &Batch,
    noise: &ActorNoise,
) -> ActorEval {
    let config = &agents.config;
    let n = config.n_ue;
    let ue_g = ue_groups(config);
    let mut ue_objective = 0.0;
    let mut ue_grads = agents.ue_actor.online.zeros_like();
    for i in 0..n {
        let order = view_order(n, i);
        let states = pick(&batch.ue_states, &order);
        let (obj, mut grads) = actor_term(
            agents,
            &agents.ue_actor.online,
            &agents.ue_critic.online,
            batch.ue_states[i].view(),
            noise.ue[i].view(),
            &ue_g,
            action_column(config, Some(0)),
            |soft| {
                let mut actions = pick(&batch.ue_actions, &order);
                actions[0] = soft;
                assemble(&states, batch.bs_prev.view(), &actions, batch.dcm.view())
            },
        );
        grads.scale(1.0 / n as f64);
        ue_grads.add_assign(&grads);
        ue_objective += obj / n as f64;
    }

    let canonical: Vec<usize> = (0..n).collect();
    let states = pick(&batch.ue_states, &canonical);
    let actions = pick(&batch.ue_actions, &canonical);
    let (bs_objective, bs_grads) = actor_term(
        agents,
        &agents.bs_actor.online,
        &agents.bs_critic.online,
        batch.bs_state.view(),
        noise.bs.view(),
        &bs_groups(config),
        action_column(config, None),
        |soft| assemble(&states, batch.bs_prev.view(), &actions, soft),
    );
    ActorEval {
        ue_objective,
        bs_objective,
        ue_grads,
        bs_grads,
    }
}

/// One Adam step on each online actor against the current online critics.
/// Returns the pre-step objectives `(ue, bs)`.
pub fn actor_update(
    agents: &mut AgentSet,
    batch: &Batch,
    noise: &ActorNoise,
) -> Result<(f64, f64), NeuralError> {
    let eval = actor_objectives_and_grads(agents, batch, noise);
    let lr = agents.train.learning_rate;
    let ue = &mut agents.ue_actor;
    adam_step(&mut ue.online, &eval.ue_grads, &mut ue.adam, lr)?;
    let bs = &mut agents.bs_actor;
    adam_step(&mut bs.online, &eval.bs_grads, &mut bs.adam, lr)?;
    Ok((eval.ue_objective, eval.bs_objective))
}
