//! Discrete-time cell simulator.
//!
//! One BS, `n_ue` UEs with FIFO SDU buffers, a single uplink data channel
//! that erases singleton transmissions with probability `tbler` and garbles
//! every simultaneous transmission, and error-free control channels.
//!
//! A TTI runs in three phases: arrivals, uplink resolution (transmissions,
//! deletes and the shared reward), then message recording. Harnesses that
//! need the channel outcome before choosing downlink messages drive the
//! phases one by one; scripted callers use [`Env::apply_actions_and_reward`].

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{ConfigError, EnvError};
use crate::rng::{stream_rng, SimRng, Stream};

pub type SduId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeAction {
    #[default]
    Nothing = 0,
    Transmit = 1,
    Delete = 2,
}

impl UeAction {
    pub const ALL: [UeAction; 3] = [UeAction::Nothing, UeAction::Transmit, UeAction::Delete];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sdu {
    pub id: SduId,
    pub arrival_tti: usize,
}

/// Bounded FIFO of SDUs awaiting delivery.
#[derive(Clone, Debug)]
pub struct UeBuffer {
    queue: VecDeque<Sdu>,
    capacity: usize,
}

impl UeBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            queue: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Enqueues `sdu` unless the buffer is full.
    pub fn push(&mut self, sdu: Sdu) -> bool {
        if self.queue.len() >= self.capacity {
            return false;
        }
        self.queue.push_back(sdu);
        true
    }

    pub fn oldest(&self) -> Option<&Sdu> {
        self.queue.front()
    }

    pub fn remove_oldest(&mut self) -> Option<Sdu> {
        self.queue.pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sdu> {
        self.queue.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    Idle,
    Decoded { ue: usize, sdu: SduId },
    Garbled,
}

/// Uplink shared-channel result of one TTI together with what the BS observes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelOutcome {
    pub kind: ChannelKind,
    /// 0 idle, `u + 1` decoded from UE `u`, `n_ue + 1` non-decodable energy.
    pub bs_observation: usize,
}

impl ChannelOutcome {
    pub fn idle() -> Self {
        Self {
            kind: ChannelKind::Idle,
            bs_observation: 0,
        }
    }

    pub fn decoded(ue: usize, sdu: SduId) -> Self {
        Self {
            kind: ChannelKind::Decoded { ue, sdu },
            bs_observation: ue + 1,
        }
    }

    pub fn garbled(n_ue: usize) -> Self {
        Self {
            kind: ChannelKind::Garbled,
            bs_observation: n_ue + 1,
        }
    }

    pub fn decoded_ue(&self) -> Option<usize> {
        match self.kind {
            ChannelKind::Decoded { ue, .. } => Some(ue),
            _ => None,
        }
    }
}

/// Resolves the shared channel for the UEs that actually put a PDU on it.
///
/// Two or more transmitters always collide. A lone transmitter is erased
/// with probability `tbler`; exactly one uniform draw is consumed per
/// lone transmission, none otherwise.
pub fn resolve_channel<R: Rng + ?Sized>(
    transmitting: &[(usize, SduId)],
    tbler: f64,
    n_ue: usize,
    rng: &mut R,
) -> ChannelOutcome {
    match transmitting {
        [] => ChannelOutcome::idle(),
        [(ue, sdu)] => {
            if rng.gen::<f64>() < tbler {
                ChannelOutcome::garbled(n_ue)
            } else {
                ChannelOutcome::decoded(*ue, *sdu)
            }
        }
        _ => ChannelOutcome::garbled(n_ue),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtiRecord {
    pub tti: usize,
    pub arrivals: Vec<bool>,
    pub ue_actions: Vec<UeAction>,
    pub ucm: Vec<usize>,
    pub dcm: Vec<usize>,
    pub outcome: ChannelOutcome,
    /// At least two UEs with non-empty buffers transmitted.
    pub collision: bool,
    pub reward: i64,
    pub bad_deletes: usize,
    pub new_delivery: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_len: usize,
    pub records: Vec<TtiRecord>,
    pub delivered_ids: BTreeSet<SduId>,
    pub generated_count: usize,
    pub dropped_count: usize,
}

impl EpisodeLog {
    pub fn is_complete(&self) -> bool {
        self.records.len() == self.episode_len
    }

    pub fn total_reward(&self) -> i64 {
        self.records.iter().map(|r| r.reward).sum()
    }
}

/// Unique SDUs received per TTI. Duplicate receptions count once.
pub fn goodput(log: &EpisodeLog) -> f64 {
    log.delivered_ids.len() as f64 / log.episode_len as f64
}

/// Fraction of TTIs with two or more simultaneous transmitters.
/// Erased singleton transmissions are not collisions.
pub fn collision_rate(log: &EpisodeLog) -> f64 {
    let collisions = log.records.iter().filter(|r| r.collision).count();
    collisions as f64 / log.episode_len as f64
}

/// Average goodput ceiling of the cell: offered load capped by one SDU per TTI.
pub fn max_goodput(arrival_prob: f64, n_ue: usize) -> f64 {
    (arrival_prob * n_ue as f64).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Arrivals,
    Uplink,
    Messages,
}

#[derive(Clone, Debug, Default)]
struct PendingTti {
    arrivals: Vec<bool>,
    ue_actions: Vec<UeAction>,
    outcome: Option<ChannelOutcome>,
    collision: bool,
    reward: i64,
    bad_deletes: usize,
    new_delivery: bool,
}

/// A single-episode cell simulation. Owns its random streams.
#[derive(Clone, Debug)]
pub struct Env {
    config: SimConfig,
    buffers: Vec<UeBuffer>,
    tti: usize,
    next_sdu_id: SduId,
    arrival_rng: SimRng,
    erasure_rng: SimRng,
    phase: Phase,
    pending: PendingTti,
    log: EpisodeLog,
}

impl Env {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let buffers = (0..config.n_ue)
            .map(|_| UeBuffer::new(config.buffer_capacity))
            .collect();
        let log = EpisodeLog {
            episode_len: config.episode_len,
            records: Vec::with_capacity(config.episode_len),
            delivered_ids: BTreeSet::new(),
            generated_count: 0,
            dropped_count: 0,
        };
        Ok(Self {
            buffers,
            tti: 0,
            next_sdu_id: 0,
            arrival_rng: stream_rng(seed, Stream::Arrivals, 0),
            erasure_rng: stream_rng(seed, Stream::Erasures, 0),
            phase: Phase::Arrivals,
            pending: PendingTti::default(),
            log,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn tti(&self) -> usize {
        self.tti
    }

    pub fn is_done(&self) -> bool {
        self.tti >= self.config.episode_len
    }

    pub fn buffer(&self, ue: usize) -> &UeBuffer {
        &self.buffers[ue]
    }

    pub fn buffer_lens(&self) -> Vec<usize> {
        self.buffers.iter().map(UeBuffer::len).collect()
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    /// DCMs sent during the previous TTI, i.e. what each UE receives now.
    pub fn delivered_dcm(&self) -> Vec<usize> {
        match self.log.records.last() {
            Some(r) => r.dcm.clone(),
            None => vec![0; self.config.n_ue],
        }
    }

    fn ensure_running(&self) -> Result<(), EnvError> {
        if self.is_done() {
            Err(EnvError::EpisodeOver(self.tti))
        } else {
            Ok(())
        }
    }

    /// Draws this TTI's arrivals. One Bernoulli trial per UE; arrivals to a
    /// full buffer are dropped and tallied.
    pub fn sample_arrivals(&mut self) -> Result<Vec<bool>, EnvError> {
        self.ensure_running()?;
        if self.phase != Phase::Arrivals {
            return Err(EnvError::Phase("arrivals already sampled this TTI"));
        }
        let p = self.config.arrival_prob;
        let mut arrivals = Vec::with_capacity(self.config.n_ue);
        for buffer in &mut self.buffers {
            let arrived = self.arrival_rng.gen::<f64>() < p;
            if arrived {
                let sdu = Sdu {
                    id: self.next_sdu_id,
                    arrival_tti: self.tti,
                };
                if buffer.push(sdu) {
                    self.next_sdu_id += 1;
                    self.log.generated_count += 1;
                } else {
                    self.log.dropped_count += 1;
                }
            }
            arrivals.push(arrived);
        }
        self.pending = PendingTti {
            arrivals: arrivals.clone(),
            ..PendingTti::default()
        };
        self.phase = Phase::Uplink;
        Ok(arrivals)
    }

    /// Applies the UE environment actions: resolves the channel, registers a
    /// new delivery, executes deletes and computes the shared reward.
    pub fn resolve_uplink(&mut self, ue_actions: &[UeAction]) -> Result<ChannelOutcome, EnvError> {
        self.ensure_running()?;
        if self.phase != Phase::Uplink {
            return Err(EnvError::Phase("uplink resolved before arrivals"));
        }
        self.check_arity(ue_actions.len())?;

        let transmitting: Vec<(usize, SduId)> = ue_actions
            .iter()
            .zip(&self.buffers)
            .enumerate()
            .filter(|(_, (a, _))| **a == UeAction::Transmit)
            .filter_map(|(ue, (_, buf))| buf.oldest().map(|sdu| (ue, sdu.id)))
            .collect();
        let outcome = resolve_channel(
            &transmitting,
            self.config.tbler,
            self.config.n_ue,
            &mut self.erasure_rng,
        );

        let r = self.config.reward_mag;
        let mut reward = 0;
        let mut new_delivery = false;
        if let ChannelKind::Decoded { sdu, .. } = outcome.kind {
            if self.log.delivered_ids.insert(sdu) {
                new_delivery = true;
                reward += r;
            }
        }
        let mut bad_deletes = 0;
        for (action, buffer) in ue_actions.iter().zip(&mut self.buffers) {
            if *action == UeAction::Delete {
                if let Some(sdu) = buffer.remove_oldest() {
                    if !self.log.delivered_ids.contains(&sdu.id) {
                        bad_deletes += 1;
                        reward -= r;
                    }
                }
            }
        }

        self.pending.ue_actions = ue_actions.to_vec();
        self.pending.outcome = Some(outcome);
        self.pending.collision = transmitting.len() >= 2;
        self.pending.reward = reward;
        self.pending.bad_deletes = bad_deletes;
        self.pending.new_delivery = new_delivery;
        self.phase = Phase::Messages;
        Ok(outcome)
    }

    /// Records this TTI's control messages and closes the TTI.
    pub fn finish_tti(&mut self, ucm: &[usize], dcm: &[usize]) -> Result<&TtiRecord, EnvError> {
        self.ensure_running()?;
        if self.phase != Phase::Messages {
            return Err(EnvError::Phase(
                "messages recorded before uplink resolution",
            ));
        }
        self.check_arity(ucm.len())?;
        self.check_arity(dcm.len())?;
        check_symbols("ucm", ucm, self.config.ul_vocab_size)?;
        check_symbols("dcm", dcm, self.config.dl_vocab_size)?;

        let pending = std::mem::take(&mut self.pending);
        self.log.records.push(TtiRecord {
            tti: self.tti,
            arrivals: pending.arrivals,
            ue_actions: pending.ue_actions,
            ucm: ucm.to_vec(),
            dcm: dcm.to_vec(),
            outcome: pending.outcome.expect("set by resolve_uplink"),
            collision: pending.collision,
            reward: pending.reward,
            bad_deletes: pending.bad_deletes,
            new_delivery: pending.new_delivery,
        });
        self.tti += 1;
        self.phase = Phase::Arrivals;
        Ok(self.log.records.last().expect("just pushed"))
    }

    /// Runs a whole TTI from already-chosen actions and messages. Arrivals
    /// are sampled first unless the caller already did so this TTI.
    pub fn apply_actions_and_reward(
        &mut self,
        ue_actions: &[UeAction],
        ucm: &[usize],
        dcm: &[usize],
    ) -> Result<TtiRecord, EnvError> {
        self.ensure_running()?;
        self.check_arity(ucm.len())?;
        self.check_arity(dcm.len())?;
        check_symbols("ucm", ucm, self.config.ul_vocab_size)?;
        check_symbols("dcm", dcm, self.config.dl_vocab_size)?;
        if self.phase == Phase::Arrivals {
            self.sample_arrivals()?;
        }
        self.resolve_uplink(ue_actions)?;
        self.finish_tti(ucm, dcm).cloned()
    }

    fn check_arity(&self, got: usize) -> Result<(), EnvError> {
        if got != self.config.n_ue {
            return Err(EnvError::Arity {
                expected: self.config.n_ue,
                got,
            });
        }
        Ok(())
    }
}

fn check_symbols(what: &'static str, symbols: &[usize], size: usize) -> Result<(), EnvError> {
    match symbols.iter().find(|&&s| s >= size) {
        Some(&value) => Err(EnvError::Symbol { what, value, size }),
        None => Ok(()),
    }
}
