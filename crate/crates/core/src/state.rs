//! Fixed-length agent states built from sliding k-step histories.
//!
//! Every discrete quantity is one-hot encoded. Histories start filled with
//! the 0-symbol of each alphabet, so a fresh history is a valid state.
//!
//! Timing at decision step `t`:
//! - UE: buffer observations `o_t..o_{t-k+1}`, own actions and UCMs from
//!   `t-1..t-k`, DCMs received at `t..t-k+1` (sent by the BS at `t-1..`).
//! - BS (decides after the uplink of `t` resolved): channel observations
//!   `o_t..o_{t-k+1}`, UCM vectors received at `t..t-k+1`, own DCM vectors
//!   from `t-1..t-k`.
//!
//! The UE index is never part of a UE state, which is what makes a single
//! shared UE policy meaningful.

use crate::config::{SimConfig, UE_ENV_ACTIONS};
use crate::env::UeAction;
use crate::error::EncodeError;

/// Encoded feature vector of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState(pub Vec<f64>);

impl AgentState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn check(field: &'static str, value: usize, size: usize) -> Result<(), EncodeError> {
    if value < size {
        Ok(())
    } else {
        Err(EncodeError {
            field,
            value,
            max: size - 1,
        })
    }
}

/// Shifts `window` right by one slot and writes `value` at the front.
fn shift_in<T: Copy>(window: &mut [T], value: T) {
    window.rotate_right(1);
    window[0] = value;
}

/// Last `k` steps of one UE, newest first.
///
/// Layout: `[obs; k] [action; k] [sent_ucm; k] [recv_dcm; k]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct UeHistory {
    k: usize,
    slots: Box<[u16]>,
}

impl UeHistory {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            slots: vec![0; 4 * k].into_boxed_slice(),
        }
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn obs(&self) -> &[u16] {
        &self.slots[..self.k]
    }

    pub fn actions(&self) -> &[u16] {
        &self.slots[self.k..2 * self.k]
    }

    pub fn sent_ucm(&self) -> &[u16] {
        &self.slots[2 * self.k..3 * self.k]
    }

    pub fn recv_dcm(&self) -> &[u16] {
        &self.slots[3 * self.k..]
    }

    /// Appends one step, discarding the oldest. `action` and `ucm` are the
    /// UE's own choices from the previous step; `dcm` is what it receives now.
    pub fn push(
        &mut self,
        config: &SimConfig,
        obs: usize,
        action: UeAction,
        ucm: usize,
        dcm: usize,
    ) -> Result<(), EncodeError> {
        check("ue observation", obs, config.buffer_capacity + 1)?;
        check("ucm", ucm, config.ul_vocab_size)?;
        check("dcm", dcm, config.dl_vocab_size)?;
        let k = self.k;
        let (o, rest) = self.slots.split_at_mut(k);
        let (a, rest) = rest.split_at_mut(k);
        let (m, d) = rest.split_at_mut(k);
        shift_in(o, obs as u16);
        shift_in(a, action.index() as u16);
        shift_in(m, ucm as u16);
        shift_in(d, dcm as u16);
        Ok(())
    }

    /// Functional form of [`UeHistory::push`].
    pub fn pushed(
        &self,
        config: &SimConfig,
        obs: usize,
        action: UeAction,
        ucm: usize,
        dcm: usize,
    ) -> Result<Self, EncodeError> {
        let mut next = self.clone();
        next.push(config, obs, action, ucm, dcm)?;
        Ok(next)
    }

    /// Writes the one-hot encoding into `out` (length `config.ue_state_dim()`).
    pub fn encode_into(&self, config: &SimConfig, out: &mut [f64]) {
        debug_assert_eq!(out.len(), config.ue_state_dim());
        out.fill(0.0);
        let widths = [
            config.buffer_capacity + 1,
            UE_ENV_ACTIONS,
            config.ul_vocab_size,
            config.dl_vocab_size,
        ];
        let mut offset = 0;
        for step in 0..self.k {
            for (field, width) in widths.iter().enumerate() {
                let symbol = self.slots[field * self.k + step] as usize;
                out[offset + symbol] = 1.0;
                offset += width;
            }
        }
    }

    pub fn encode(&self, config: &SimConfig) -> AgentState {
        let mut v = vec![0.0; config.ue_state_dim()];
        self.encode_into(config, &mut v);
        AgentState(v)
    }
}

/// Last `k` steps seen by the BS, newest first.
///
/// Layout: `[obs; k] [recv_ucm; k * n] [sent_dcm; k * n]`, per-UE vectors
/// stored contiguously per step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BsHistory {
    k: usize,
    n_ue: usize,
    slots: Box<[u16]>,
}

impl BsHistory {
    pub fn new(k: usize, n_ue: usize) -> Self {
        Self {
            k,
            n_ue,
            slots: vec![0; k * (1 + 2 * n_ue)].into_boxed_slice(),
        }
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    pub fn obs(&self) -> &[u16] {
        &self.slots[..self.k]
    }

    /// UCM vector received `step` steps ago.
    pub fn recv_ucm(&self, step: usize) -> &[u16] {
        let start = self.k + step * self.n_ue;
        &self.slots[start..start + self.n_ue]
    }

    /// DCM vector sent `step + 1` steps ago.
    pub fn sent_dcm(&self, step: usize) -> &[u16] {
        let start = self.k + self.k * self.n_ue + step * self.n_ue;
        &self.slots[start..start + self.n_ue]
    }

    pub fn push(
        &mut self,
        config: &SimConfig,
        obs: usize,
        ucm: &[usize],
        dcm_sent: &[usize],
    ) -> Result<(), EncodeError> {
        let n = self.n_ue;
        check("bs observation", obs, n + 2)?;
        for &m in ucm {
            check("ucm", m, config.ul_vocab_size)?;
        }
        for &d in dcm_sent {
            check("dcm", d, config.dl_vocab_size)?;
        }
        assert!(
            ucm.len() == n && dcm_sent.len() == n,
            "per-UE message vectors must have length n_ue"
        );
        let k = self.k;
        let (o, rest) = self.slots.split_at_mut(k);
        let (m, d) = rest.split_at_mut(k * n);
        shift_in(o, obs as u16);
        m.rotate_right(n);
        d.rotate_right(n);
        for u in 0..n {
            m[u] = ucm[u] as u16;
            d[u] = dcm_sent[u] as u16;
        }
        Ok(())
    }

    pub fn pushed(
        &self,
        config: &SimConfig,
        obs: usize,
        ucm: &[usize],
        dcm_sent: &[usize],
    ) -> Result<Self, EncodeError> {
        let mut next = self.clone();
        next.push(config, obs, ucm, dcm_sent)?;
        Ok(next)
    }

    pub fn encode_into(&self, config: &SimConfig, out: &mut [f64]) {
        debug_assert_eq!(out.len(), config.bs_state_dim());
        out.fill(0.0);
        let n = self.n_ue;
        let (u_w, d_w) = (config.ul_vocab_size, config.dl_vocab_size);
        let mut offset = 0;
        for step in 0..self.k {
            out[offset + self.obs()[step] as usize] = 1.0;
            offset += n + 2;
            for &m in self.recv_ucm(step) {
                out[offset + m as usize] = 1.0;
                offset += u_w;
            }
            for &d in self.sent_dcm(step) {
                out[offset + d as usize] = 1.0;
                offset += d_w;
            }
        }
    }

    pub fn encode(&self, config: &SimConfig) -> AgentState {
        let mut v = vec![0.0; config.bs_state_dim()];
        self.encode_into(config, &mut v);
        AgentState(v)
    }
}

pub fn encode_ue(history: &UeHistory, config: &SimConfig) -> AgentState {
    history.encode(config)
}

pub fn encode_bs(history: &BsHistory, config: &SimConfig) -> AgentState {
    history.encode(config)
}
