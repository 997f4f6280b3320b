use crate::config::{SimConfig, UE_ENV_ACTIONS};
use crate::env::{ChannelOutcome, UeAction};
use crate::neural::{greedy_select, group_indices, LogitGroups, MlpParams};
use crate::protocol::{HistoryTracker, MacProtocol, UeDecision};

use super::{bs_groups, ue_groups};

/// Decodes a UE one-hot `[env action; 3][ucm; |U|]`.
pub(crate) fn ue_decision(one_hot: &[f64], groups: &LogitGroups) -> UeDecision {
    let idx = group_indices(one_hot, groups);
    debug_assert_eq!(groups.sizes()[0], UE_ENV_ACTIONS);
    UeDecision::new(
        UeAction::from_index(idx[0]).expect("three env actions"),
        idx[1],
    )
}

/// Greedy execution of trained actors: no exploration noise, no learning.
/// Borrows the actor weights, so it cannot alter them.
pub struct LearnedProtocol<'a> {
    ue_actor: &'a MlpParams,
    bs_actor: &'a MlpParams,
    ue_groups: LogitGroups,
    bs_groups: LogitGroups,
    tracker: HistoryTracker,
    scratch: Vec<f64>,
}

impl<'a> LearnedProtocol<'a> {
    pub fn new(config: &SimConfig, ue_actor: &'a MlpParams, bs_actor: &'a MlpParams) -> Self {
        assert_eq!(
            ue_actor.shape().input,
            config.ue_state_dim(),
            "ue actor width"
        );
        assert_eq!(
            bs_actor.shape().input,
            config.bs_state_dim(),
            "bs actor width"
        );
        Self {
            ue_actor,
            bs_actor,
            ue_groups: ue_groups(config),
            bs_groups: bs_groups(config),
            tracker: HistoryTracker::new(config),
            scratch: Vec::new(),
        }
    }
}

impl MacProtocol for LearnedProtocol<'_> {
    fn begin_episode(&mut self, config: &SimConfig, _episode_seed: u64) {
        assert_eq!(
            config,
            self.tracker.config(),
            "protocol built for another config"
        );
        self.tracker.reset();
    }

    fn decide_ues(&mut self, buffer_lens: &[usize], dcm_received: &[usize]) -> Vec<UeDecision> {
        self.tracker.observe_ues(buffer_lens, dcm_received);
        let config = self.tracker.config().clone();
        self.scratch.resize(config.ue_state_dim(), 0.0);
        let decisions: Vec<UeDecision> = self
            .tracker
            .ue()
            .iter()
            .map(|h| {
                h.encode_into(&config, &mut self.scratch);
                let logits = self
                    .ue_actor
                    .forward(&self.scratch)
                    .expect("ue state width");
                ue_decision(&greedy_select(&logits, &self.ue_groups), &self.ue_groups)
            })
            .collect();
        self.tracker.record_ue_decisions(&decisions);
        decisions
    }

    fn decide_bs(&mut self, outcome: &ChannelOutcome, ucm: &[usize]) -> Vec<usize> {
        self.tracker.observe_bs(outcome.bs_observation, ucm);
        let state = self.tracker.bs().encode(self.tracker.config());
        let logits = self.bs_actor.forward(&state.0).expect("bs state width");
        let dcm = group_indices(&greedy_select(&logits, &self.bs_groups), &self.bs_groups);
        self.tracker.record_dcm(&dcm);
        dcm
    }
}
