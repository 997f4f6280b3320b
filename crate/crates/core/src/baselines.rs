//! Hand-coded reference protocols on the same action and message alphabets
//! as the learned agents.
//!
//! Contention-free: a UE with data sends SR every TTI, transmits only in
//! the TTI after an SG and deletes its head SDU after an ACK. The BS ACKs
//! whatever it decoded and grants one of the remaining requesters at random.
//!
//! Contention-based: a UE with data transmits with probability `p_t` and
//! deletes after an ACK; the BS only ACKs.

use rand::Rng;
use rayon::prelude::*;

use crate::config::SimConfig;
use crate::env::{ChannelOutcome, UeAction};
use crate::error::{ConfigError, HarnessError};
use crate::harness::{eval_seeds, evaluate, Metrics};
use crate::protocol::{MacProtocol, UeDecision};
use crate::rng::{stream_rng, SimRng, Stream};

/// Meaning the baselines give to message ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabularyMap {
    pub ucm_null: usize,
    pub ucm_sr: usize,
    pub dcm_null: usize,
    pub dcm_sg: usize,
    pub dcm_ack: usize,
}

pub const VOCAB: VocabularyMap = VocabularyMap {
    ucm_null: 0,
    ucm_sr: 1,
    dcm_null: 0,
    dcm_sg: 1,
    dcm_ack: 2,
};

impl VocabularyMap {
    /// The baselines need two UCM and three DCM symbols.
    pub fn check(config: &SimConfig) -> Result<(), ConfigError> {
        if config.ul_vocab_size < 2 {
            return Err(ConfigError::Invariant("baselines need ul_vocab_size >= 2"));
        }
        if config.dl_vocab_size < 3 {
            return Err(ConfigError::Invariant("baselines need dl_vocab_size >= 3"));
        }
        Ok(())
    }
}

/// What a baseline UE knows: whether the last DCM granted or acknowledged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BaselineUeState {
    pub granted: bool,
    pub acked: bool,
}

impl BaselineUeState {
    pub fn from_dcm(last_dcm: usize) -> Self {
        Self {
            granted: last_dcm == VOCAB.dcm_sg,
            acked: last_dcm == VOCAB.dcm_ack,
        }
    }
}

pub fn cf_ue_policy(buffer_len: usize, last_dcm: usize) -> UeDecision {
    if buffer_len == 0 {
        return UeDecision::new(UeAction::Nothing, VOCAB.ucm_null);
    }
    let s = BaselineUeState::from_dcm(last_dcm);
    let action = if s.acked {
        UeAction::Delete
    } else if s.granted {
        UeAction::Transmit
    } else {
        UeAction::Nothing
    };
    UeDecision::new(action, VOCAB.ucm_sr)
}

/// ACK to a decoded UE (its SR is ignored this TTI), then one SG to a
/// uniformly chosen remaining requester.
pub fn cf_bs_policy<R: Rng + ?Sized>(
    outcome: &ChannelOutcome,
    ucm: &[usize],
    rng: &mut R,
) -> Vec<usize> {
    let mut dcm = vec![VOCAB.dcm_null; ucm.len()];
    let decoded = outcome.decoded_ue();
    if let Some(u) = decoded {
        dcm[u] = VOCAB.dcm_ack;
    }
    let requesters: Vec<usize> = ucm
        .iter()
        .enumerate()
        .filter(|&(u, &m)| m == VOCAB.ucm_sr && Some(u) != decoded)
        .map(|(u, _)| u)
        .collect();
    if !requesters.is_empty() {
        dcm[requesters[rng.gen_range(0..requesters.len())]] = VOCAB.dcm_sg;
    }
    dcm
}

/// Draws from `rng` only when the UE has data and no ACK to act on.
pub fn cb_ue_policy<R: Rng + ?Sized>(
    buffer_len: usize,
    last_dcm: usize,
    p_t: f64,
    rng: &mut R,
) -> UeDecision {
    let action = if buffer_len == 0 {
        UeAction::Nothing
    } else if BaselineUeState::from_dcm(last_dcm).acked {
        UeAction::Delete
    } else if rng.gen::<f64>() < p_t {
        UeAction::Transmit
    } else {
        UeAction::Nothing
    };
    UeDecision::new(action, VOCAB.ucm_null)
}

pub fn cb_bs_policy(outcome: &ChannelOutcome, n_ue: usize) -> Vec<usize> {
    let mut dcm = vec![VOCAB.dcm_null; n_ue];
    if let Some(u) = outcome.decoded_ue() {
        dcm[u] = VOCAB.dcm_ack;
    }
    dcm
}

/// Contention-free protocol. The grant lottery is keyed per episode.
pub struct ContentionFree {
    rng: SimRng,
}

impl ContentionFree {
    pub fn new(config: &SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        VocabularyMap::check(config)?;
        Ok(Self {
            rng: stream_rng(0, Stream::Lottery, 0),
        })
    }
}

impl MacProtocol for ContentionFree {
    fn begin_episode(&mut self, _config: &SimConfig, episode_seed: u64) {
        self.rng = stream_rng(episode_seed, Stream::Lottery, 0);
    }

    fn decide_ues(&mut self, buffer_lens: &[usize], dcm_received: &[usize]) -> Vec<UeDecision> {
        buffer_lens
            .iter()
            .zip(dcm_received)
            .map(|(&len, &d)| cf_ue_policy(len, d))
            .collect()
    }

    fn decide_bs(&mut self, outcome: &ChannelOutcome, ucm: &[usize]) -> Vec<usize> {
        cf_bs_policy(outcome, ucm, &mut self.rng)
    }
}

/// Contention-based protocol with transmission probability `p_t`.
pub struct ContentionBased {
    p_t: f64,
    rng: SimRng,
}

impl ContentionBased {
    pub fn new(config: &SimConfig, p_t: f64) -> Result<Self, ConfigError> {
        config.validate()?;
        VocabularyMap::check(config)?;
        if !(0.0..=1.0).contains(&p_t) {
            return Err(ConfigError::Invariant("0 <= p_t <= 1"));
        }
        Ok(Self {
            p_t,
            rng: stream_rng(0, Stream::Lottery, 0),
        })
    }

    pub fn p_t(&self) -> f64 {
        self.p_t
    }
}

impl MacProtocol for ContentionBased {
    fn begin_episode(&mut self, _config: &SimConfig, episode_seed: u64) {
        self.rng = stream_rng(episode_seed, Stream::Lottery, 0);
    }

    fn decide_ues(&mut self, buffer_lens: &[usize], dcm_received: &[usize]) -> Vec<UeDecision> {
        buffer_lens
            .iter()
            .zip(dcm_received)
            .map(|(&len, &d)| cb_ue_policy(len, d, self.p_t, &mut self.rng))
            .collect()
    }

    fn decide_bs(&mut self, outcome: &ChannelOutcome, ucm: &[usize]) -> Vec<usize> {
        cb_bs_policy(outcome, ucm.len())
    }
}

/// `0.05, 0.10, .., 1.00`.
pub fn default_pt_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub best: f64,
    /// `(p_t, eval metrics)` per grid point, in grid order.
    pub scores: Vec<(f64, Metrics)>,
}

/// Picks the `p_t` with the highest mean goodput on the shared evaluation
/// episodes. Ties go to the smaller `p_t`.
pub fn tune_pt(
    config: &SimConfig,
    grid: &[f64],
    episodes: usize,
) -> Result<TuneResult, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let seeds = eval_seeds(episodes);
    let scores = grid
        .par_iter()
        .map(|&p| {
            let mut protocol = ContentionBased::new(config, p)?;
            Ok((p, evaluate(config, &seeds, &mut protocol)?))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut best: Option<(f64, f64)> = None;
    for (p, m) in &scores {
        let better = match best {
            None => true,
            Some((bp, bg)) => m.goodput_mean > bg || (m.goodput_mean == bg && *p < bp),
        };
        if better {
            best = Some((*p, m.goodput_mean));
        }
    }
    Ok(TuneResult {
        best: best.expect("non-empty grid").0,
        scores,
    })
}
