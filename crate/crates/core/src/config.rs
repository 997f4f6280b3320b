//! Environment and learner parameterization.
//!
//! Defaults mirror the reference cell: two UEs, 20-SDU buffers, a 24-TTI
//! episode and the learner hyperparameters used for all experiments.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Arrival probabilities of the traffic sweep at two UEs.
pub const ARRIVAL_SWEEP: [f64; 6] = [0.083, 0.16, 0.25, 0.33, 0.41, 0.5];

/// UE counts of the scalability sweep.
pub const UE_SWEEP: [usize; 4] = [2, 3, 4, 5];

/// Mean number of SDUs offered to the whole cell per episode in the UE sweep.
pub const UE_SWEEP_CELL_LOAD: f64 = 16.0;

/// Cell and episode parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_ue: usize,
    pub buffer_capacity: usize,
    pub arrival_prob: f64,
    pub tbler: f64,
    pub dl_vocab_size: usize,
    pub ul_vocab_size: usize,
    pub episode_len: usize,
    pub reward_mag: i64,
    pub history_len: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_ue: 2,
            buffer_capacity: 20,
            arrival_prob: 0.5,
            tbler: 0.1,
            dl_vocab_size: 3,
            ul_vocab_size: 2,
            episode_len: 24,
            reward_mag: 3,
            history_len: 3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, what: &'static str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invariant(what))
            }
        }
        check(self.n_ue >= 1, "n_ue >= 1")?;
        check(self.buffer_capacity >= 1, "buffer_capacity >= 1")?;
        check(self.episode_len >= 1, "episode_len >= 1")?;
        check(self.history_len >= 1, "history_len >= 1")?;
        check(
            (0.0..=1.0).contains(&self.arrival_prob),
            "0 <= arrival_prob <= 1",
        )?;
        check((0.0..=1.0).contains(&self.tbler), "0 <= tbler <= 1")?;
        check(self.dl_vocab_size >= 1, "dl_vocab_size >= 1")?;
        check(self.ul_vocab_size >= 1, "ul_vocab_size >= 1")?;
        check(self.reward_mag >= 1, "reward_mag >= 1")?;
        Ok(())
    }

    /// Mean SDU arrivals per UE per episode.
    pub fn mean_arrivals(&self) -> f64 {
        self.arrival_prob * self.episode_len as f64
    }

    /// Length of an encoded UE state vector.
    pub fn ue_state_dim(&self) -> usize {
        self.history_len
            * ((self.buffer_capacity + 1)
                + UE_ENV_ACTIONS
                + self.ul_vocab_size
                + self.dl_vocab_size)
    }

    /// Length of an encoded BS state vector.
    pub fn bs_state_dim(&self) -> usize {
        self.history_len
            * ((self.n_ue + 2) + self.n_ue * self.ul_vocab_size + self.n_ue * self.dl_vocab_size)
    }

    /// Width of one UE's one-hot action (environment action then UCM).
    pub fn ue_action_dim(&self) -> usize {
        UE_ENV_ACTIONS + self.ul_vocab_size
    }

    /// Width of the BS one-hot action (one DCM per UE).
    pub fn bs_action_dim(&self) -> usize {
        self.n_ue * self.dl_vocab_size
    }

    /// Input width of every centralized critic.
    pub fn critic_input_dim(&self) -> usize {
        self.n_ue * (self.ue_state_dim() + self.ue_action_dim())
            + self.bs_state_dim()
            + self.bs_action_dim()
    }
}

/// Number of UE environment actions (nothing, transmit, delete).
pub const UE_ENV_ACTIONS: usize = 3;

/// Learner hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub hidden: [usize; 2],
    pub update_interval: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub policy_reg: f64,
    pub gumbel_temperature: f64,
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            replay_capacity: 100_000,
            batch_size: 1024,
            hidden: [64, 64],
            update_interval: 96,
            learning_rate: 1e-3,
            gamma: 0.9,
            policy_reg: 1e-3,
            gumbel_temperature: 1.0,
            tau: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |what| Err(ConfigError::Invariant(what));
        if self.replay_capacity == 0 {
            return fail("replay_capacity >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size >= 1");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden widths >= 1");
        }
        if self.update_interval == 0 {
            return fail("update_interval >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate >= 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("0 <= gamma <= 1");
        }
        if !(self.policy_reg >= 0.0 && self.policy_reg.is_finite()) {
            return fail("policy_reg >= 0");
        }
        if !(self.gumbel_temperature > 0.0 && self.gumbel_temperature.is_finite()) {
            return fail("gumbel_temperature > 0");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail("0 <= tau <= 1");
        }
        Ok(())
    }
}
