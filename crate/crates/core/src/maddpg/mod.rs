//! Multi-agent actor-critic learner with centralized critics.
//!
//! All UEs share one actor and one critic; the BS has its own pair. Every
//! online network has a slowly tracking target copy and its own Adam state.
//!
//! Critic inputs are `[S_1 .. S_N, S_bs, A_1 .. A_N, D]`. The BS critic and
//! every stored batch use the canonical UE order `1..N`. The shared UE
//! critic sees the cell from each UE in turn: view `i` lists UE `i` first,
//! then the others cyclically, so the shared weights never need a UE index.

mod policy;
mod replay;
mod trainer;
mod update;

use rand::Rng;

use crate::config::{SimConfig, TrainConfig, UE_ENV_ACTIONS};
use crate::error::ConfigError;
use crate::neural::{
    greedy_select, gumbel_softmax, AdamState, GumbelSample, LogitGroups, MlpParams, MlpShape,
};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::state::AgentState;

pub use policy::LearnedProtocol;
pub use replay::{Batch, ReplayBuffer, Transition};
pub use trainer::{Trainer, UpdateStats};
pub use update::{
    actor_objectives_and_grads, actor_update, critic_losses_and_grads, critic_update, td_targets,
    ActorEval, ActorNoise, CriticEval,
};

/// An online network, its target copy and its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub online: MlpParams,
    pub target: MlpParams,
    pub adam: AdamState,
}

impl Network {
    fn new(online: MlpParams) -> Self {
        Self {
            target: online.clone(),
            adam: AdamState::new(&online),
            online,
        }
    }
}

/// The four learned networks of a cell, regardless of the number of UEs.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentSet {
    pub config: SimConfig,
    pub train: TrainConfig,
    pub ue_actor: Network,
    pub ue_critic: Network,
    pub bs_actor: Network,
    pub bs_critic: Network,
}

pub fn ue_groups(config: &SimConfig) -> LogitGroups {
    LogitGroups::new(vec![UE_ENV_ACTIONS, config.ul_vocab_size]).expect("validated vocabulary")
}

pub fn bs_groups(config: &SimConfig) -> LogitGroups {
    LogitGroups::new(vec![config.dl_vocab_size; config.n_ue]).expect("validated vocabulary")
}

pub fn actor_shapes(config: &SimConfig, train: &TrainConfig) -> (MlpShape, MlpShape) {
    (
        MlpShape::new(config.ue_state_dim(), train.hidden, config.ue_action_dim()),
        MlpShape::new(config.bs_state_dim(), train.hidden, config.bs_action_dim()),
    )
}

pub fn critic_shape(config: &SimConfig, train: &TrainConfig) -> MlpShape {
    MlpShape::new(config.critic_input_dim(), train.hidden, 1)
}

impl AgentSet {
    /// Freshly initialized networks; targets start equal to the online nets.
    pub fn new(config: &SimConfig, train: &TrainConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        train.validate()?;
        let mut rng = stream_rng(seed, Stream::ParamInit, 0);
        let (ue_shape, bs_shape) = actor_shapes(config, train);
        let critic = critic_shape(config, train);
        Ok(Self {
            config: config.clone(),
            train: train.clone(),
            ue_actor: Network::new(MlpParams::init(ue_shape, &mut rng)),
            ue_critic: Network::new(MlpParams::init(critic, &mut rng)),
            bs_actor: Network::new(MlpParams::init(bs_shape, &mut rng)),
            bs_critic: Network::new(MlpParams::init(critic, &mut rng)),
        })
    }

    /// Builds a set around given online parameters, e.g. from a checkpoint.
    pub fn from_online(
        config: &SimConfig,
        train: &TrainConfig,
        nets: [MlpParams; 4],
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let [ue_actor, ue_critic, bs_actor, bs_critic] = nets;
        let (ue_shape, bs_shape) = actor_shapes(config, train);
        let critic = critic_shape(config, train);
        if ue_actor.shape() != ue_shape
            || bs_actor.shape() != bs_shape
            || ue_critic.shape() != critic
            || bs_critic.shape() != critic
        {
            return Err(ConfigError::Invariant(
                "network shapes match the configured dimensions",
            ));
        }
        Ok(Self {
            config: config.clone(),
            train: train.clone(),
            ue_actor: Network::new(ue_actor),
            ue_critic: Network::new(ue_critic),
            bs_actor: Network::new(bs_actor),
            bs_critic: Network::new(bs_critic),
        })
    }

    pub fn networks(&self) -> [&Network; 4] {
        [
            &self.ue_actor,
            &self.ue_critic,
            &self.bs_actor,
            &self.bs_critic,
        ]
    }

    pub fn networks_mut(&mut self) -> [&mut Network; 4] {
        [
            &mut self.ue_actor,
            &mut self.ue_critic,
            &mut self.bs_actor,
            &mut self.bs_critic,
        ]
    }

    pub fn online_params(&self) -> [&MlpParams; 4] {
        self.networks().map(|n| &n.online)
    }
}

/// Every target parameter moves to `tau * online + (1 - tau) * target`.
pub fn soft_update(agents: &mut AgentSet, tau: f64) {
    assert!((0.0..=1.0).contains(&tau), "tau must lie in [0, 1]");
    for net in agents.networks_mut() {
        net.target
            .zip_apply(&net.online, |t, o| *t = tau * o + (1.0 - tau) * *t);
    }
}

/// How actors turn logits into actions.
pub enum Exploration<'a> {
    /// Per-group argmax; the soft part equals the hard one-hot.
    Greedy,
    /// Gumbel-softmax with one stream per agent: UEs `0..N`, then the BS.
    Explore(&'a mut [SimRng]),
}

/// Hard and relaxed actions of every agent for one TTI.
#[derive(Clone, Debug, PartialEq)]
pub struct JointAction {
    pub ue: Vec<GumbelSample>,
    pub bs: GumbelSample,
}

fn choose<R: Rng + ?Sized>(
    logits: &[f64],
    groups: &LogitGroups,
    temperature: f64,
    rng: Option<&mut R>,
) -> GumbelSample {
    match rng {
        Some(rng) => gumbel_softmax(logits, groups, temperature, rng),
        None => {
            let hard = greedy_select(logits, groups);
            GumbelSample {
                soft: hard.clone(),
                hard,
            }
        }
    }
}

impl AgentSet {
    pub fn ue_action<R: Rng + ?Sized>(&self, state: &[f64], rng: Option<&mut R>) -> GumbelSample {
        let logits = self.ue_actor.online.forward(state).expect("ue state width");
        choose(
            &logits,
            &ue_groups(&self.config),
            self.train.gumbel_temperature,
            rng,
        )
    }

    pub fn bs_action<R: Rng + ?Sized>(&self, state: &[f64], rng: Option<&mut R>) -> GumbelSample {
        let logits = self.bs_actor.online.forward(state).expect("bs state width");
        choose(
            &logits,
            &bs_groups(&self.config),
            self.train.gumbel_temperature,
            rng,
        )
    }
}

/// Evaluates every actor on its own state. All UEs go through the one
/// shared UE actor.
pub fn select_actions(
    agents: &AgentSet,
    ue_states: &[AgentState],
    bs_state: &AgentState,
    mode: Exploration<'_>,
) -> JointAction {
    let n = agents.config.n_ue;
    assert_eq!(ue_states.len(), n, "one state per UE");
    match mode {
        Exploration::Greedy => JointAction {
            ue: ue_states
                .iter()
                .map(|s| agents.ue_action::<SimRng>(s.as_slice(), None))
                .collect(),
            bs: agents.bs_action::<SimRng>(bs_state.as_slice(), None),
        },
        Exploration::Explore(rngs) => {
            assert_eq!(rngs.len(), n + 1, "one stream per agent");
            let (ue_rngs, bs_rng) = rngs.split_at_mut(n);
            JointAction {
                ue: ue_states
                    .iter()
                    .zip(ue_rngs)
                    .map(|(s, r)| agents.ue_action(s.as_slice(), Some(r)))
                    .collect(),
                bs: agents.bs_action(bs_state.as_slice(), Some(&mut bs_rng[0])),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> (SimConfig, TrainConfig) {
        let sim = SimConfig {
            n_ue: 3,
            buffer_capacity: 2,
            history_len: 1,
            ..SimConfig::default()
        };
        let train = TrainConfig {
            hidden: [8, 8],
            ..TrainConfig::default()
        };
        (sim, train)
    }

    fn random_state(dim: usize, rng: &mut SimRng) -> AgentState {
        AgentState((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn network_dimensions_follow_the_config() {
        let sim = SimConfig::default();
        let train = TrainConfig::default();
        let a = AgentSet::new(&sim, &train, 1).unwrap();
        assert_eq!(a.ue_actor.online.shape(), MlpShape::new(87, [64, 64], 5));
        assert_eq!(a.bs_actor.online.shape(), MlpShape::new(42, [64, 64], 6));
        let critic = MlpShape::new(2 * (87 + 5) + 42 + 6, [64, 64], 1);
        assert_eq!(a.ue_critic.online.shape(), critic);
        assert_eq!(a.bs_critic.online.shape(), critic);
        for net in a.networks() {
            assert_eq!(net.online, net.target);
        }
        // four parameter sets whatever the cell size
        let five = SimConfig {
            n_ue: 5,
            ..SimConfig::default()
        };
        assert_eq!(AgentSet::new(&five, &train, 1).unwrap().networks().len(), 4);
    }

    #[test]
    fn soft_update_edges_and_composition() {
        let (sim, train) = tiny();
        let mut a = AgentSet::new(&sim, &train, 2).unwrap();
        let other = AgentSet::new(&sim, &train, 3).unwrap();
        for (net, o) in a.networks_mut().into_iter().zip(other.networks()) {
            net.online = o.online.clone();
        }
        let frozen = a.clone();
        soft_update(&mut a, 0.0);
        assert_eq!(a, frozen);

        let tau = 0.3;
        soft_update(&mut a, tau);
        soft_update(&mut a, tau);
        let mix = 1.0 - (1.0 - tau) * (1.0 - tau);
        for (net, before) in a.networks().into_iter().zip(frozen.networks()) {
            for ((t, t0), o) in net
                .target
                .values()
                .zip(before.target.values())
                .zip(net.online.values())
            {
                assert!((t - (mix * o + (1.0 - mix) * t0)).abs() < 1e-12);
            }
        }
        soft_update(&mut a, 1.0);
        for net in a.networks() {
            assert_eq!(net.online, net.target);
        }
    }

    #[test]
    fn target_drift_never_grows_with_frozen_online() {
        let (sim, train) = tiny();
        let mut a = AgentSet::new(&sim, &train, 4).unwrap();
        let other = AgentSet::new(&sim, &train, 5).unwrap();
        for (net, o) in a.networks_mut().into_iter().zip(other.networks()) {
            net.online = o.online.clone();
        }
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            soft_update(&mut a, 0.05);
            let drift = a
                .networks()
                .iter()
                .map(|n| n.online.max_abs_diff(&n.target))
                .fold(0.0, f64::max);
            assert!(drift <= last);
            last = drift;
        }
    }

    #[test]
    fn greedy_selection_is_deterministic_and_equivariant() {
        let (sim, train) = tiny();
        let a = AgentSet::new(&sim, &train, 6).unwrap();
        let mut rng = SimRng::seed_from_u64(7);
        let ue: Vec<AgentState> = (0..3)
            .map(|_| random_state(sim.ue_state_dim(), &mut rng))
            .collect();
        let bs = random_state(sim.bs_state_dim(), &mut rng);
        let first = select_actions(&a, &ue, &bs, Exploration::Greedy);
        assert_eq!(first, select_actions(&a, &ue, &bs, Exploration::Greedy));
        let perm = [2, 0, 1];
        let permuted: Vec<AgentState> = perm.iter().map(|&i| ue[i].clone()).collect();
        let second = select_actions(&a, &permuted, &bs, Exploration::Greedy);
        for (slot, &i) in perm.iter().enumerate() {
            assert_eq!(second.ue[slot], first.ue[i]);
        }
    }

    #[test]
    fn exploration_is_equivariant_when_streams_follow_their_states() {
        let (sim, train) = tiny();
        let a = AgentSet::new(&sim, &train, 8).unwrap();
        let mut rng = SimRng::seed_from_u64(9);
        let ue: Vec<AgentState> = (0..3)
            .map(|_| random_state(sim.ue_state_dim(), &mut rng))
            .collect();
        let bs = random_state(sim.bs_state_dim(), &mut rng);
        let streams: Vec<SimRng> = (0..4).map(|i| stream_rng(10, Stream::Gumbel, i)).collect();
        let first = select_actions(&a, &ue, &bs, Exploration::Explore(&mut streams.clone()));
        let perm = [1, 2, 0];
        let permuted: Vec<AgentState> = perm.iter().map(|&i| ue[i].clone()).collect();
        let mut permuted_streams: Vec<SimRng> = perm.iter().map(|&i| streams[i].clone()).collect();
        permuted_streams.push(streams[3].clone());
        let second = select_actions(
            &a,
            &permuted,
            &bs,
            Exploration::Explore(&mut permuted_streams),
        );
        for (slot, &i) in perm.iter().enumerate() {
            assert_eq!(second.ue[slot], first.ue[i]);
        }
        assert_eq!(second.bs, first.bs);
    }

    #[test]
    fn identical_states_draw_independent_samples() {
        let (sim, train) = tiny();
        let a = AgentSet::new(&sim, &train, 11).unwrap();
        let s = AgentState(vec![0.0; sim.ue_state_dim()]);
        let ue = vec![s.clone(), s.clone(), s];
        let bs = AgentState(vec![0.0; sim.bs_state_dim()]);
        let mut streams: Vec<SimRng> = (0..4).map(|i| stream_rng(12, Stream::Gumbel, i)).collect();
        let j = select_actions(&a, &ue, &bs, Exploration::Explore(&mut streams));
        assert_ne!(j.ue[0].soft, j.ue[1].soft);
        assert_ne!(j.ue[1].soft, j.ue[2].soft);
    }

    #[test]
    fn from_online_rejects_mismatched_shapes() {
        let (sim, train) = tiny();
        let a = AgentSet::new(&sim, &train, 13).unwrap();
        let nets = a.online_params().map(|p| p.clone());
        let back = AgentSet::from_online(&sim, &train, nets.clone()).unwrap();
        assert_eq!(back.online_params(), a.online_params());
        let other = SimConfig {
            n_ue: 2,
            ..sim.clone()
        };
        assert!(AgentSet::from_online(&other, &train, nets).is_err());
    }
}
