use crate::config::{SimConfig, TrainConfig};
use crate::env::{ChannelOutcome, TtiRecord};
use crate::error::{ConfigError, HarnessError};
use crate::neural::{group_indices, LogitGroups};
use crate::protocol::{HistoryTracker, MacProtocol, UeDecision};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::state::UeHistory;

use super::policy::ue_decision;
use super::update::{actor_update, critic_update, ActorNoise};
use super::{bs_groups, soft_update, ue_groups, AgentSet, Batch, ReplayBuffer, Transition};

/// Pre-step losses and objectives of one update cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub ue_critic_loss: f64,
    pub bs_critic_loss: f64,
    pub ue_actor_objective: f64,
    pub bs_actor_objective: f64,
}

/// Exploring, learning protocol. Every TTI it acts with Gumbel-softmax
/// samples, stores one transition and, on the configured cadence, runs a
/// critic step, an actor step and a soft target update.
///
/// A transition for TTI `t` is completed at `t+1` once the successor
/// states exist; the last TTI of an episode is stored as terminal.
pub struct Trainer {
    agents: AgentSet,
    replay: ReplayBuffer,
    tracker: HistoryTracker,
    ue_groups: LogitGroups,
    bs_groups: LogitGroups,
    /// One stream per UE, then the BS.
    gumbel: Vec<SimRng>,
    update_noise: SimRng,
    replay_rng: SimRng,
    step_ue: Vec<UeHistory>,
    step_decisions: Vec<UeDecision>,
    current: Option<Transition>,
    awaiting: Option<Transition>,
    env_steps: u64,
    updates: u64,
    last_stats: Option<UpdateStats>,
    scratch: Vec<f64>,
}

impl Trainer {
    pub fn new(config: &SimConfig, train: &TrainConfig, seed: u64) -> Result<Self, ConfigError> {
        let agents = AgentSet::new(config, train, seed)?;
        Ok(Self::with_agents(agents, seed))
    }

    pub fn with_agents(agents: AgentSet, seed: u64) -> Self {
        let n = agents.config.n_ue;
        Self {
            replay: ReplayBuffer::new(agents.train.replay_capacity),
            tracker: HistoryTracker::new(&agents.config),
            ue_groups: ue_groups(&agents.config),
            bs_groups: bs_groups(&agents.config),
            gumbel: (0..=n as u64)
                .map(|i| stream_rng(seed, Stream::Gumbel, i))
                .collect(),
            update_noise: stream_rng(seed, Stream::Gumbel, u64::MAX),
            replay_rng: stream_rng(seed, Stream::Replay, 0),
            step_ue: Vec::new(),
            step_decisions: Vec::new(),
            current: None,
            awaiting: None,
            env_steps: 0,
            updates: 0,
            last_stats: None,
            scratch: Vec::new(),
            agents,
        }
    }

    pub fn agents(&self) -> &AgentSet {
        &self.agents
    }

    pub fn into_agents(self) -> AgentSet {
        self.agents
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn last_stats(&self) -> Option<UpdateStats> {
        self.last_stats
    }

    /// Positions of every training-side random stream, in 32-bit words.
    /// Unchanged positions prove that no training draw was consumed.
    pub fn draw_counters(&self) -> Vec<u128> {
        self.gumbel
            .iter()
            .chain([&self.update_noise, &self.replay_rng])
            .map(|r| r.get_word_pos())
            .collect()
    }

    fn store(&mut self, t: Transition) -> Result<(), HarnessError> {
        self.replay.store(t);
        Ok(())
    }

    /// One critic step, one actor step and a soft update of all targets.
    pub fn update(&mut self) -> Result<UpdateStats, HarnessError> {
        let train = self.agents.train.clone();
        let batch = {
            let rows = self.replay.sample(train.batch_size, &mut self.replay_rng);
            Batch::from_transitions(&self.agents.config, &rows)
        };
        let (ue_critic_loss, bs_critic_loss) =
            critic_update(&mut self.agents, &batch, train.gamma)?;
        let noise = ActorNoise::sample(&self.agents.config, batch.len(), &mut self.update_noise);
        let (ue_actor_objective, bs_actor_objective) =
            actor_update(&mut self.agents, &batch, &noise)?;
        soft_update(&mut self.agents, train.tau);
        self.updates += 1;
        let stats = UpdateStats {
            ue_critic_loss,
            bs_critic_loss,
            ue_actor_objective,
            bs_actor_objective,
        };
        self.last_stats = Some(stats);
        Ok(stats)
    }
}

impl MacProtocol for Trainer {
    fn begin_episode(&mut self, config: &SimConfig, _episode_seed: u64) {
        assert_eq!(
            config, &self.agents.config,
            "trainer built for another config"
        );
        self.tracker.reset();
        self.current = None;
        self.awaiting = None;
    }

    fn decide_ues(&mut self, buffer_lens: &[usize], dcm_received: &[usize]) -> Vec<UeDecision> {
        self.tracker.observe_ues(buffer_lens, dcm_received);
        if let Some(prev) = self.awaiting.as_mut() {
            prev.next_ue_states.clone_from_slice(self.tracker.ue());
        }
        let config = &self.agents.config;
        self.scratch.resize(config.ue_state_dim(), 0.0);
        let mut decisions = Vec::with_capacity(config.n_ue);
        for (h, rng) in self.tracker.ue().iter().zip(&mut self.gumbel) {
            h.encode_into(config, &mut self.scratch);
            let sample = self.agents.ue_action(&self.scratch, Some(rng));
            decisions.push(ue_decision(&sample.hard, &self.ue_groups));
        }
        self.tracker.record_ue_decisions(&decisions);
        self.step_ue.clear();
        self.step_ue.extend_from_slice(self.tracker.ue());
        self.step_decisions.clone_from(&decisions);
        decisions
    }

    fn decide_bs(&mut self, outcome: &ChannelOutcome, ucm: &[usize]) -> Vec<usize> {
        self.tracker.observe_bs(outcome.bs_observation, ucm);
        if let Some(mut prev) = self.awaiting.take() {
            prev.next_bs_state.clone_from(self.tracker.bs());
            self.replay.store(prev);
        }
        let config = &self.agents.config;
        let state = self.tracker.bs().encode(config);
        let n = config.n_ue;
        let sample = self.agents.bs_action(&state.0, Some(&mut self.gumbel[n]));
        let dcm = group_indices(&sample.hard, &self.bs_groups);
        self.tracker.record_dcm(&dcm);
        self.current = Some(Transition {
            ue_states: self.step_ue.clone(),
            bs_prev: self.tracker.bs_prev().clone(),
            bs_state: self.tracker.bs().clone(),
            ue_actions: self.step_decisions.clone(),
            dcm: dcm.clone(),
            reward: 0,
            next_ue_states: self.step_ue.clone(),
            next_bs_state: self.tracker.bs().clone(),
            terminal: false,
        });
        dcm
    }

    fn end_tti(&mut self, record: &TtiRecord) -> Result<(), HarnessError> {
        let mut t = self
            .current
            .take()
            .expect("end_tti follows decide_bs within a TTI");
        t.reward = record.reward;
        if record.tti + 1 == self.agents.config.episode_len {
            t.terminal = true;
            self.store(t)?;
        } else {
            self.awaiting = Some(t);
        }
        self.env_steps += 1;
        let train = &self.agents.train;
        if self.env_steps % train.update_interval as u64 == 0
            && self.replay.len() >= train.batch_size
        {
            self.update()?;
        }
        Ok(())
    }
}
