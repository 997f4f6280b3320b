use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::config::{SimConfig, UE_ENV_ACTIONS};
use crate::protocol::UeDecision;
use crate::state::{BsHistory, UeHistory};

/// One TTI of experience, kept as compact histories and symbols.
///
/// The critic's joint state at `t` is the UE states at `t` together with the
/// BS state the BS acted on at `t-1` (`bs_prev`), because the BS decides
/// after the channel resolves. The successor joint state is then the UE
/// states at `t+1` together with `bs_state`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub ue_states: Vec<UeHistory>,
    pub bs_prev: BsHistory,
    /// BS actor input at `t`.
    pub bs_state: BsHistory,
    pub ue_actions: Vec<UeDecision>,
    pub dcm: Vec<usize>,
    pub reward: i64,
    pub next_ue_states: Vec<UeHistory>,
    /// BS actor input at `t+1`. Not used when `terminal`.
    pub next_bs_state: BsHistory,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions; the oldest is evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            pushed: 0,
        }
    }

    pub fn store(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Transitions stored since creation, evicted ones included.
    pub fn total_stored(&self) -> u64 {
        self.pushed
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform indices, drawn with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling an empty replay buffer");
        (0..count)
            .map(|_| rng.gen_range(0..self.items.len()))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(count, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Dense minibatch, rows are transitions. Per-UE blocks are in canonical
/// UE order.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ue_states: Vec<Array2<f64>>,
    pub bs_prev: Array2<f64>,
    pub bs_state: Array2<f64>,
    pub ue_actions: Vec<Array2<f64>>,
    pub dcm: Array2<f64>,
    pub reward: Array1<f64>,
    /// 1.0 for terminal rows.
    pub terminal: Array1<f64>,
    pub next_ue_states: Vec<Array2<f64>>,
    pub next_bs_state: Array2<f64>,
}

fn stack(rows: usize, width: usize, mut fill: impl FnMut(usize, &mut [f64])) -> Array2<f64> {
    let mut m = Array2::zeros((rows, width));
    for (r, mut row) in m.rows_mut().into_iter().enumerate() {
        fill(r, row.as_slice_mut().expect("row-major"));
    }
    m
}

impl Batch {
    pub fn from_transitions(config: &SimConfig, rows: &[&Transition]) -> Self {
        let b = rows.len();
        let n = config.n_ue;
        let (ue_dim, bs_dim) = (config.ue_state_dim(), config.bs_state_dim());
        let ue_states = (0..n)
            .map(|u| {
                stack(b, ue_dim, |r, out| {
                    rows[r].ue_states[u].encode_into(config, out)
                })
            })
            .collect();
        let next_ue_states = (0..n)
            .map(|u| {
                stack(b, ue_dim, |r, out| {
                    rows[r].next_ue_states[u].encode_into(config, out)
                })
            })
            .collect();
        let ue_actions = (0..n)
            .map(|u| {
                stack(b, config.ue_action_dim(), |r, out| {
                    let d = rows[r].ue_actions[u];
                    out[d.action.index()] = 1.0;
                    out[UE_ENV_ACTIONS + d.ucm] = 1.0;
                })
            })
            .collect();
        let d_w = config.dl_vocab_size;
        Self {
            ue_states,
            bs_prev: stack(b, bs_dim, |r, out| rows[r].bs_prev.encode_into(config, out)),
            bs_state: stack(b, bs_dim, |r, out| {
                rows[r].bs_state.encode_into(config, out)
            }),
            ue_actions,
            dcm: stack(b, config.bs_action_dim(), |r, out| {
                for (u, &d) in rows[r].dcm.iter().enumerate() {
                    out[u * d_w + d] = 1.0;
                }
            }),
            reward: rows.iter().map(|t| t.reward as f64).collect(),
            terminal: rows
                .iter()
                .map(|t| if t.terminal { 1.0 } else { 0.0 })
                .collect(),
            next_ue_states,
            next_bs_state: stack(b, bs_dim, |r, out| {
                rows[r].next_bs_state.encode_into(config, out)
            }),
        }
    }

    /// Dense random rows of the right widths, for gradient checks. Rewards
    /// are drawn from `{-R, 0, R}` and about a quarter of rows are terminal.
    pub fn random<R: Rng + ?Sized>(config: &SimConfig, rows: usize, rng: &mut R) -> Self {
        let mut block = |width: usize| Array2::from_shape_fn((rows, width), |_| rng.gen::<f64>());
        let n = config.n_ue;
        let ue_states = (0..n).map(|_| block(config.ue_state_dim())).collect();
        let next_ue_states = (0..n).map(|_| block(config.ue_state_dim())).collect();
        let ue_actions = (0..n).map(|_| block(config.ue_action_dim())).collect();
        let bs_prev = block(config.bs_state_dim());
        let bs_state = block(config.bs_state_dim());
        let next_bs_state = block(config.bs_state_dim());
        let dcm = block(config.bs_action_dim());
        let r = config.reward_mag as f64;
        Self {
            ue_states,
            bs_prev,
            bs_state,
            ue_actions,
            dcm,
            reward: (0..rows)
                .map(|_| r * rng.gen_range(-1..=1) as f64)
                .collect(),
            terminal: (0..rows)
                .map(|_| if rng.gen_bool(0.25) { 1.0 } else { 0.0 })
                .collect(),
            next_ue_states,
            next_bs_state,
        }
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    /// The same batch with rows reordered so that new row `r` is old row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let rows = |m: &Array2<f64>| m.select(ndarray::Axis(0), perm);
        let vec = |v: &Array1<f64>| perm.iter().map(|&i| v[i]).collect();
        Self {
            ue_states: self.ue_states.iter().map(rows).collect(),
            bs_prev: rows(&self.bs_prev),
            bs_state: rows(&self.bs_state),
            ue_actions: self.ue_actions.iter().map(rows).collect(),
            dcm: rows(&self.dcm),
            reward: vec(&self.reward),
            terminal: vec(&self.terminal),
            next_ue_states: self.next_ue_states.iter().map(rows).collect(),
            next_bs_state: rows(&self.next_bs_state),
        }
    }
}
