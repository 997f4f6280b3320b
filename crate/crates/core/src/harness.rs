//! Training, evaluation and test orchestration.
//!
//! Each repetition trains one learner, evaluating it greedily every
//! `eval_period` episodes on a fixed episode set shared by every
//! repetition and method. The best evaluated snapshot of all repetitions
//! survives and is tested on a separate episode set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{default_pt_grid, tune_pt, ContentionBased, ContentionFree};
use crate::config::{SimConfig, TrainConfig, ARRIVAL_SWEEP, UE_SWEEP, UE_SWEEP_CELL_LOAD};
use crate::env::{collision_rate, goodput, max_goodput, EpisodeLog};
use crate::error::{ConfigError, HarnessError};
use crate::maddpg::{AgentSet, LearnedProtocol, Trainer};
use crate::neural::MlpParams;
use crate::protocol::{run_episode, MacProtocol};
use crate::rng::{derive_seed, eval_episode_seed, test_episode_seed, Stream};

/// Per-episode samples with their means and normal-approximation 95%
/// confidence half-widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub goodput_mean: f64,
    pub goodput_ci95: f64,
    pub collision_mean: f64,
    pub collision_ci95: f64,
    pub goodput: Vec<f64>,
    pub collision: Vec<f64>,
}

/// Mean and `1.96 * sd / sqrt(n)` with the sample standard deviation.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

impl Metrics {
    pub fn from_samples(goodput: Vec<f64>, collision: Vec<f64>) -> Self {
        let (goodput_mean, goodput_ci95) = mean_ci95(&goodput);
        let (collision_mean, collision_ci95) = mean_ci95(&collision);
        Self {
            goodput_mean,
            goodput_ci95,
            collision_mean,
            collision_ci95,
            goodput,
            collision,
        }
    }

    pub fn episodes(&self) -> usize {
        self.goodput.len()
    }
}

pub fn eval_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(eval_episode_seed).collect()
}

pub fn test_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(test_episode_seed).collect()
}

/// Runs `protocol` once per seed and summarizes goodput and collision rate.
pub fn evaluate<P: MacProtocol + ?Sized>(
    config: &SimConfig,
    seeds: &[u64],
    protocol: &mut P,
) -> Result<Metrics, HarnessError> {
    evaluate_logged(config, seeds, protocol, &mut |_, _| Ok(()))
}

/// [`evaluate`] handing every episode log to `on_log` with its index.
pub fn evaluate_logged<P: MacProtocol + ?Sized>(
    config: &SimConfig,
    seeds: &[u64],
    protocol: &mut P,
    on_log: &mut dyn FnMut(usize, &EpisodeLog) -> Result<(), HarnessError>,
) -> Result<Metrics, HarnessError> {
    let mut g = Vec::with_capacity(seeds.len());
    let mut c = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let log = run_episode(config, seed, protocol)?;
        g.push(goodput(&log));
        c.push(collision_rate(&log));
        on_log(i, &log)?;
    }
    Ok(Metrics::from_samples(g, c))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Best evaluation score seen at any checkpoint.
    #[default]
    HistoricalBest,
    /// Score at each repetition's final checkpoint.
    LastCheckpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Maddpg,
    ContentionFree,
    ContentionBased,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Maddpg,
        Method::ContentionFree,
        Method::ContentionBased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Maddpg => "maddpg",
            Method::ContentionFree => "contention_free",
            Method::ContentionBased => "contention_based",
        }
    }
}

/// Everything one experiment needs. Defaults give the full-scale protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub test_episodes: usize,
    pub repetitions: usize,
    pub eval_period: usize,
    /// Base seed; repetition seeds are derived from it.
    pub seed: u64,
    pub selector: Selector,
    pub tune_grid: Vec<f64>,
    pub tune_episodes: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            train_episodes: 100_000,
            eval_episodes: 500,
            test_episodes: 5000,
            repetitions: 8,
            eval_period: 1000,
            seed: 0,
            selector: Selector::HistoricalBest,
            tune_grid: default_pt_grid(),
            tune_episodes: 500,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        self.train.validate()?;
        let fail = |what| Err(ConfigError::Invariant(what));
        if self.eval_episodes == 0 || self.test_episodes == 0 || self.tune_episodes == 0 {
            return fail("evaluation, test and tuning episode counts >= 1");
        }
        if self.repetitions == 0 {
            return fail("repetitions >= 1");
        }
        if self.eval_period == 0 {
            return fail("eval_period >= 1");
        }
        if self.tune_grid.is_empty() || self.tune_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("tune_grid non-empty within [0, 1]");
        }
        Ok(())
    }

    pub fn repetition_seed(&self, repetition: usize) -> u64 {
        derive_seed(self.seed, Stream::Repetition, repetition as u64)
    }

    pub fn repetition_seeds(&self) -> Vec<u64> {
        (0..self.repetitions)
            .map(|r| self.repetition_seed(r))
            .collect()
    }

    /// Episode counts after which the learner is evaluated: every
    /// `eval_period`, plus the final episode if it falls between.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut points: Vec<usize> = (1..=self.train_episodes / self.eval_period)
            .map(|k| k * self.eval_period)
            .collect();
        if points.last() != Some(&self.train_episodes) {
            points.push(self.train_episodes);
        }
        points
    }
}

/// Frozen online networks with the evaluation score that earned them a place.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolSnapshot {
    pub ue_actor: MlpParams,
    pub ue_critic: MlpParams,
    pub bs_actor: MlpParams,
    pub bs_critic: MlpParams,
    pub config: SimConfig,
    pub train: TrainConfig,
    pub eval_goodput: f64,
    pub repetition: usize,
    pub checkpoint_episode: usize,
}

impl ProtocolSnapshot {
    pub fn capture(
        agents: &AgentSet,
        eval_goodput: f64,
        repetition: usize,
        checkpoint_episode: usize,
    ) -> Self {
        Self {
            ue_actor: agents.ue_actor.online.clone(),
            ue_critic: agents.ue_critic.online.clone(),
            bs_actor: agents.bs_actor.online.clone(),
            bs_critic: agents.bs_critic.online.clone(),
            config: agents.config.clone(),
            train: agents.train.clone(),
            eval_goodput,
            repetition,
            checkpoint_episode,
        }
    }

    pub fn protocol(&self) -> LearnedProtocol<'_> {
        LearnedProtocol::new(&self.config, &self.ue_actor, &self.bs_actor)
    }

    pub fn agents(&self) -> Result<AgentSet, ConfigError> {
        AgentSet::from_online(
            &self.config,
            &self.train,
            [
                self.ue_actor.clone(),
                self.ue_critic.clone(),
                self.bs_actor.clone(),
                self.bs_critic.clone(),
            ],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub repetition: usize,
    pub episode: usize,
    pub eval_goodput: f64,
    pub eval_goodput_ci95: f64,
    pub eval_collision: f64,
    /// Running maximum of `eval_goodput` up to this checkpoint.
    pub best_goodput: f64,
}

#[derive(Clone, Debug)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    /// Highest-scoring checkpoint, earliest on ties.
    pub best: ProtocolSnapshot,
    pub last: ProtocolSnapshot,
}

impl RepetitionResult {
    pub fn selected(&self, selector: Selector) -> &ProtocolSnapshot {
        match selector {
            Selector::HistoricalBest => &self.best,
            Selector::LastCheckpoint => &self.last,
        }
    }
}

pub fn train_repetition(
    plan: &ExperimentPlan,
    repetition: usize,
) -> Result<RepetitionResult, HarnessError> {
    train_repetition_observed(plan, repetition, &|_| {})
}

/// [`train_repetition`] reporting every checkpoint as it is reached.
pub fn train_repetition_observed(
    plan: &ExperimentPlan,
    repetition: usize,
    observe: &(dyn Fn(&CurvePoint) + Sync),
) -> Result<RepetitionResult, HarnessError> {
    plan.validate()?;
    let seed = plan.repetition_seed(repetition);
    let mut trainer = Trainer::new(&plan.sim, &plan.train, seed)?;
    let seeds = eval_seeds(plan.eval_episodes);
    let mut curve = Vec::new();
    let mut best: Option<ProtocolSnapshot> = None;
    let mut last = None;
    let mut episode = 0;
    for checkpoint in plan.checkpoints() {
        while episode < checkpoint {
            let episode_seed = derive_seed(seed, Stream::TrainEpisodes, episode as u64);
            run_episode(&plan.sim, episode_seed, &mut trainer)?;
            episode += 1;
        }
        let agents = trainer.agents();
        let metrics = {
            let mut greedy =
                LearnedProtocol::new(&plan.sim, &agents.ue_actor.online, &agents.bs_actor.online);
            evaluate(&plan.sim, &seeds, &mut greedy)?
        };
        let snapshot =
            ProtocolSnapshot::capture(agents, metrics.goodput_mean, repetition, checkpoint);
        if best
            .as_ref()
            .is_none_or(|b| metrics.goodput_mean > b.eval_goodput)
        {
            best = Some(snapshot.clone());
        }
        let point = CurvePoint {
            repetition,
            episode: checkpoint,
            eval_goodput: metrics.goodput_mean,
            eval_goodput_ci95: metrics.goodput_ci95,
            eval_collision: metrics.collision_mean,
            best_goodput: best.as_ref().map_or(f64::NAN, |b| b.eval_goodput),
        };
        observe(&point);
        curve.push(point);
        last = Some(snapshot);
    }
    Ok(RepetitionResult {
        repetition,
        seed,
        curve,
        best: best.expect("at least one checkpoint"),
        last: last.expect("at least one checkpoint"),
    })
}

/// Highest evaluation score; ties go to the lower repetition, then the
/// earlier checkpoint.
pub fn select_best<'a, I>(snapshots: I) -> Result<&'a ProtocolSnapshot, HarnessError>
where
    I: IntoIterator<Item = &'a ProtocolSnapshot>,
{
    snapshots
        .into_iter()
        .reduce(|best, s| {
            let key = |s: &ProtocolSnapshot| (s.repetition, s.checkpoint_episode);
            if s.eval_goodput > best.eval_goodput
                || (s.eval_goodput == best.eval_goodput && key(s) < key(best))
            {
                s
            } else {
                best
            }
        })
        .ok_or(HarnessError::NoSnapshots)
}

/// Greedy test of a snapshot on the dedicated test episodes.
pub fn test_snapshot(
    snapshot: &ProtocolSnapshot,
    episodes: usize,
) -> Result<Metrics, HarnessError> {
    evaluate(
        &snapshot.config,
        &test_seeds(episodes),
        &mut snapshot.protocol(),
    )
}

#[derive(Clone, Debug)]
pub struct LearnedRun {
    pub repetitions: Vec<RepetitionResult>,
    pub survivor: ProtocolSnapshot,
    pub test: Metrics,
}

/// Trains every repetition in parallel, keeps one survivor and tests it.
pub fn run_learned(
    plan: &ExperimentPlan,
    observe: &(dyn Fn(&CurvePoint) + Sync),
) -> Result<LearnedRun, HarnessError> {
    plan.validate()?;
    let repetitions = (0..plan.repetitions)
        .into_par_iter()
        .map(|r| train_repetition_observed(plan, r, observe))
        .collect::<Result<Vec<_>, _>>()?;
    let survivor = select_best(repetitions.iter().map(|r| r.selected(plan.selector)))?.clone();
    let test = test_snapshot(&survivor, plan.test_episodes)?;
    Ok(LearnedRun {
        repetitions,
        survivor,
        test,
    })
}

pub fn test_contention_free(config: &SimConfig, episodes: usize) -> Result<Metrics, HarnessError> {
    evaluate(
        config,
        &test_seeds(episodes),
        &mut ContentionFree::new(config)?,
    )
}

pub fn test_contention_based(
    config: &SimConfig,
    p_t: f64,
    episodes: usize,
) -> Result<Metrics, HarnessError> {
    evaluate(
        config,
        &test_seeds(episodes),
        &mut ContentionBased::new(config, p_t)?,
    )
}

/// One line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub n_ue: usize,
    pub arrival_prob: f64,
    pub goodput_mean: f64,
    pub goodput_ci95: f64,
    pub collision_mean: f64,
    pub upper_bound: f64,
}

impl ResultRow {
    pub fn new(method: Method, config: &SimConfig, metrics: &Metrics) -> Self {
        Self {
            method,
            n_ue: config.n_ue,
            arrival_prob: config.arrival_prob,
            goodput_mean: metrics.goodput_mean,
            goodput_ci95: metrics.goodput_ci95,
            collision_mean: metrics.collision_mean,
            upper_bound: max_goodput(config.arrival_prob, config.n_ue),
        }
    }
}

/// Train/select/test for the learned method, tune-and-test for the
/// contention-based baseline, test for the contention-free one.
pub fn run_point(
    plan: &ExperimentPlan,
    methods: &[Method],
) -> Result<Vec<ResultRow>, HarnessError> {
    plan.validate()?;
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let metrics = match method {
            Method::Maddpg => run_learned(plan, &|_| {})?.test,
            Method::ContentionFree => test_contention_free(&plan.sim, plan.test_episodes)?,
            Method::ContentionBased => {
                let tuned = tune_pt(&plan.sim, &plan.tune_grid, plan.tune_episodes)?;
                test_contention_based(&plan.sim, tuned.best, plan.test_episodes)?
            }
        };
        rows.push(ResultRow::new(method, &plan.sim, &metrics));
    }
    Ok(rows)
}

/// Arrival sweep points: two UEs, each listed arrival probability.
pub fn arrival_sweep_configs(base: &SimConfig) -> Vec<SimConfig> {
    ARRIVAL_SWEEP
        .iter()
        .map(|&p| SimConfig {
            n_ue: 2,
            arrival_prob: p,
            ..base.clone()
        })
        .collect()
}

/// UE sweep points at a fixed cell load: `p = load / (N * T)`.
pub fn ue_sweep_configs(base: &SimConfig) -> Vec<SimConfig> {
    UE_SWEEP
        .iter()
        .map(|&n| SimConfig {
            n_ue: n,
            arrival_prob: UE_SWEEP_CELL_LOAD / (n as f64 * base.episode_len as f64),
            ..base.clone()
        })
        .collect()
}

pub fn sweep(
    plan: &ExperimentPlan,
    points: &[SimConfig],
    methods: &[Method],
) -> Result<Vec<ResultRow>, HarnessError> {
    let per_point = points
        .iter()
        .map(|sim| {
            let plan = ExperimentPlan {
                sim: sim.clone(),
                ..plan.clone()
            };
            run_point(&plan, methods)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

pub fn sweep_arrival(
    plan: &ExperimentPlan,
    methods: &[Method],
) -> Result<Vec<ResultRow>, HarnessError> {
    sweep(plan, &arrival_sweep_configs(&plan.sim), methods)
}

pub fn sweep_ues(
    plan: &ExperimentPlan,
    methods: &[Method],
) -> Result<Vec<ResultRow>, HarnessError> {
    sweep(plan, &ue_sweep_configs(&plan.sim), methods)
}
