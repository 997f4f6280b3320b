//! The interface every MAC protocol (learned or hand-coded) plugs into, and
//! the episode loop that drives it.
//!
//! Within TTI `t` the loop runs: arrivals, UE decisions (on buffer
//! occupancy and the DCM sent at `t-1`), channel resolution with deletes and
//! reward, then the BS decision on this TTI's channel observation and UCMs.
//! The DCMs chosen at `t` reach the UEs at `t+1`.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::env::{ChannelOutcome, Env, EpisodeLog, TtiRecord, UeAction};
use crate::error::HarnessError;
use crate::state::{BsHistory, UeHistory};

/// What one UE does in one TTI.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UeDecision {
    pub action: UeAction,
    pub ucm: usize,
}

impl UeDecision {
    pub fn new(action: UeAction, ucm: usize) -> Self {
        Self { action, ucm }
    }
}

pub trait MacProtocol {
    /// Resets per-episode state. `episode_seed` keys any protocol-side
    /// randomness that must be reproducible per episode.
    fn begin_episode(&mut self, config: &SimConfig, episode_seed: u64);

    fn decide_ues(&mut self, buffer_lens: &[usize], dcm_received: &[usize]) -> Vec<UeDecision>;

    fn decide_bs(&mut self, outcome: &ChannelOutcome, ucm: &[usize]) -> Vec<usize>;

    /// Sees the closed TTI, including the shared reward.
    fn end_tti(&mut self, _record: &TtiRecord) -> Result<(), HarnessError> {
        Ok(())
    }
}

/// Runs one full episode of `config` keyed by `episode_seed`.
pub fn run_episode<P: MacProtocol + ?Sized>(
    config: &SimConfig,
    episode_seed: u64,
    protocol: &mut P,
) -> Result<EpisodeLog, HarnessError> {
    let mut env = Env::new(config.clone(), episode_seed)?;
    protocol.begin_episode(config, episode_seed);
    let mut actions = Vec::with_capacity(config.n_ue);
    let mut ucm = Vec::with_capacity(config.n_ue);
    while !env.is_done() {
        env.sample_arrivals()?;
        let decisions = protocol.decide_ues(&env.buffer_lens(), &env.delivered_dcm());
        actions.clear();
        ucm.clear();
        for d in &decisions {
            actions.push(d.action);
            ucm.push(d.ucm);
        }
        let outcome = env.resolve_uplink(&actions)?;
        let dcm = protocol.decide_bs(&outcome, &ucm);
        let record = env.finish_tti(&ucm, &dcm)?;
        protocol.end_tti(record)?;
    }
    Ok(env.into_log())
}

/// Sliding histories of every agent, advanced in TTI order.
#[derive(Clone, Debug)]
pub struct HistoryTracker {
    config: SimConfig,
    ue: Vec<UeHistory>,
    bs: BsHistory,
    bs_prev: BsHistory,
    last_ue: Vec<UeDecision>,
    last_dcm: Vec<usize>,
}

impl HistoryTracker {
    pub fn new(config: &SimConfig) -> Self {
        let k = config.history_len;
        let n = config.n_ue;
        Self {
            config: config.clone(),
            ue: vec![UeHistory::new(k); n],
            bs: BsHistory::new(k, n),
            bs_prev: BsHistory::new(k, n),
            last_ue: vec![UeDecision::default(); n],
            last_dcm: vec![0; n],
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        *self = Self::new(&self.config);
    }

    /// Pushes `(o_t, a_{t-1}, m_{t-1}, d_t)` for every UE.
    pub fn observe_ues(&mut self, buffer_lens: &[usize], dcm_received: &[usize]) {
        for (u, h) in self.ue.iter_mut().enumerate() {
            let last = self.last_ue[u];
            h.push(
                &self.config,
                buffer_lens[u],
                last.action,
                last.ucm,
                dcm_received[u],
            )
            .expect("simulator emits in-range symbols");
        }
    }

    pub fn record_ue_decisions(&mut self, decisions: &[UeDecision]) {
        self.last_ue.copy_from_slice(decisions);
    }

    /// Pushes `(o^b_t, m_t, d_{t-1})`; the state before the push stays
    /// available as [`HistoryTracker::bs_prev`].
    pub fn observe_bs(&mut self, observation: usize, ucm: &[usize]) {
        self.bs_prev.clone_from(&self.bs);
        self.bs
            .push(&self.config, observation, ucm, &self.last_dcm)
            .expect("simulator emits in-range symbols");
    }

    pub fn record_dcm(&mut self, dcm: &[usize]) {
        self.last_dcm.copy_from_slice(dcm);
    }

    pub fn ue(&self) -> &[UeHistory] {
        &self.ue
    }

    pub fn bs(&self) -> &BsHistory {
        &self.bs
    }

    pub fn bs_prev(&self) -> &BsHistory {
        &self.bs_prev
    }
}
