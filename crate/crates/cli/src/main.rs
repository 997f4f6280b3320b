//! `emac`: train, evaluate, sweep and tune from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage,
//! 3 I/O failure (including a locked output directory), 4 unusable
//! checkpoint.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use emac_core::baselines::{tune_pt, ContentionBased, ContentionFree};
use emac_core::error::{ConfigError, HarnessError, PersistError};
use emac_core::harness::{
    evaluate_logged, run_learned, sweep_arrival, sweep_ues, test_seeds, ExperimentPlan, Method,
    Metrics, ResultRow, Selector,
};
use emac_core::maddpg::AgentSet;
use emac_core::persist::{
    append_trace, encode_checkpoint, load_checkpoint, load_plan, plan_to_json, save_checkpoint,
    write_atomic, write_curve, write_curve_summary, write_results, OutputLock, RunManifest,
};
use emac_core::protocol::MacProtocol;

#[derive(Parser)]
#[command(
    name = "emac",
    version,
    about = "Learned uplink MAC signaling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MethodArg {
    Maddpg,
    ContentionFree,
    ContentionBased,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Maddpg => Method::Maddpg,
            MethodArg::ContentionFree => Method::ContentionFree,
            MethodArg::ContentionBased => Method::ContentionBased,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SelectorArg {
    HistoricalBest,
    LastCheckpoint,
}

impl From<SelectorArg> for Selector {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::HistoricalBest => Selector::HistoricalBest,
            SelectorArg::LastCheckpoint => Selector::LastCheckpoint,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SweepKind {
    Arrival,
    Ues,
}

/// Overrides shared by every verb.
#[derive(clap::Args)]
struct PlanArgs {
    /// JSON experiment plan; omitted fields take the reference values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every repetition, keep a survivor and test it.
    Train {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Training episodes per repetition.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum)]
        selector: Option<SelectorArg>,
    },
    /// Test a checkpoint or a baseline on the test episodes.
    Evaluate {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "maddpg")]
        method: MethodArg,
        /// Test episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Transmission probability of the contention-based baseline;
        /// tuned on the evaluation episodes when omitted.
        #[arg(long)]
        p_t: Option<f64>,
        /// Directory for results.csv, manifest.json and the trace.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write trace.jsonl with one line per TTI.
        #[arg(long, requires = "out")]
        trace: bool,
    },
    /// Run every method at each point of a sweep.
    Sweep {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these methods (repeatable); all by default.
        #[arg(long, value_enum)]
        method: Vec<MethodArg>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long, value_enum)]
        selector: Option<SelectorArg>,
    },
    /// Grid-search the contention-based transmission probability.
    TunePt {
        #[command(flatten)]
        plan: PlanArgs,
        /// Evaluation episodes per grid point.
        #[arg(long)]
        episodes: Option<usize>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Persist(PersistError),
    Harness(HarnessError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Persist(e) => match e {
                PersistError::Config(_) | PersistError::ConfigParse(_) => 2,
                PersistError::Io(_) | PersistError::Csv(_) | PersistError::Locked(_) => 3,
                PersistError::Version { .. } | PersistError::Corrupt(_) => 4,
            },
            CliError::Harness(HarnessError::Config(_)) => 2,
            CliError::Harness(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Persist(e) => write!(f, "{e}"),
            CliError::Harness(e) => write!(f, "{e}"),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Persist(e)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Harness(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Persist(PersistError::Config(e))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Persist(PersistError::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

fn base_plan(args: &PlanArgs) -> CliResult<ExperimentPlan> {
    let mut plan = match &args.config {
        Some(path) => load_plan(path)?,
        None => ExperimentPlan::default(),
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    Ok(plan)
}

fn checked(plan: ExperimentPlan) -> CliResult<ExperimentPlan> {
    plan.validate()?;
    Ok(plan)
}

/// Claims `out`, records the plan and returns the manifest to finish later.
/// `command` names the verb only, so the manifest hash does not depend on
/// where the output goes.
fn open_output(
    out: &Path,
    command: &str,
    plan: &ExperimentPlan,
) -> CliResult<(OutputLock, RunManifest)> {
    let lock = OutputLock::acquire(out)?;
    write_atomic(&out.join("config.json"), plan_to_json(plan).as_bytes())?;
    Ok((lock, RunManifest::new(command, plan)))
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    method: &'a str,
    episodes: usize,
    goodput_mean: f64,
    goodput_ci95: f64,
    collision_mean: f64,
    collision_ci95: f64,
    upper_bound: f64,
}

fn print_metrics(row: &ResultRow, metrics: &Metrics) {
    let line = MetricsLine {
        method: row.method.as_str(),
        episodes: metrics.episodes(),
        goodput_mean: metrics.goodput_mean,
        goodput_ci95: metrics.goodput_ci95,
        collision_mean: metrics.collision_mean,
        collision_ci95: metrics.collision_ci95,
        upper_bound: row.upper_bound,
    };
    println!(
        "{}",
        serde_json::to_string(&line).expect("metrics serialize")
    );
}

fn train(
    plan_args: &PlanArgs,
    out: &Path,
    repetitions: Option<usize>,
    episodes: Option<usize>,
    selector: Option<SelectorArg>,
) -> CliResult<()> {
    let mut plan = base_plan(plan_args)?;
    if let Some(r) = repetitions {
        plan.repetitions = r;
    }
    if let Some(e) = episodes {
        plan.train_episodes = e;
    }
    if let Some(s) = selector {
        plan.selector = s.into();
    }
    let plan = checked(plan)?;
    let (_lock, mut manifest) = open_output(out, "train", &plan)?;
    let run = run_learned(&plan, &|p| {
        eprintln!(
            "rep {} episode {}: eval goodput {:.4} (best {:.4})",
            p.repetition, p.episode, p.eval_goodput, p.best_goodput
        )
    })?;
    let hash = manifest.manifest_hash.clone();
    let curve: Vec<_> = run
        .repetitions
        .iter()
        .flat_map(|r| r.curve.iter().cloned())
        .collect();
    write_curve(&out.join("curve.csv"), &curve, &hash)?;
    write_curve_summary(&out.join("curve_summary.csv"), &curve, &hash)?;
    for rep in &run.repetitions {
        let path = out.join(format!("rep_{}.ckpt", rep.repetition));
        save_checkpoint(&path, rep.selected(plan.selector))?;
    }
    let best = encode_checkpoint(&run.survivor);
    write_atomic(&out.join("best.ckpt"), &best)?;
    let row = ResultRow::new(Method::Maddpg, &plan.sim, &run.test);
    write_results(&out.join("results.csv"), std::slice::from_ref(&row), &hash)?;
    manifest.finish(Some(&best));
    manifest.save(&out.join("manifest.json"))?;
    print_metrics(&row, &run.test);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    plan_args: &PlanArgs,
    checkpoint: Option<&Path>,
    method: Method,
    episodes: Option<usize>,
    p_t: Option<f64>,
    out: Option<&Path>,
    trace: bool,
) -> CliResult<()> {
    let snapshot = match (method, checkpoint) {
        (Method::Maddpg, None) => {
            return Err(CliError::Usage("--method maddpg needs --checkpoint".into()))
        }
        (Method::Maddpg, Some(path)) => Some(load_checkpoint(path)?),
        (_, Some(_)) => {
            return Err(CliError::Usage(format!(
                "--checkpoint only applies to --method maddpg, not {}",
                method.as_str()
            )))
        }
        (_, None) => None,
    };
    let mut plan = base_plan(plan_args)?;
    if let Some(snap) = &snapshot {
        // without a config file the checkpoint's own cell is evaluated
        if plan_args.config.is_none() {
            plan.sim = snap.config.clone();
        }
        plan.train = snap.train.clone();
    }
    if let Some(e) = episodes {
        plan.test_episodes = e;
    }
    if let Some(p) = p_t {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage(format!("--p-t {p} outside [0, 1]")));
        }
    }
    let plan = checked(plan)?;
    let sim = plan.sim.clone();

    let learned = match &snapshot {
        Some(snap) => {
            let agents = AgentSet::from_online(
                &sim,
                &snap.train,
                [
                    snap.ue_actor.clone(),
                    snap.ue_critic.clone(),
                    snap.bs_actor.clone(),
                    snap.bs_critic.clone(),
                ],
            )
            .map_err(|e| {
                CliError::Usage(format!("checkpoint does not fit the configured cell: {e}"))
            })?;
            Some(agents)
        }
        None => None,
    };
    let mut protocol: Box<dyn MacProtocol + '_> = match method {
        Method::Maddpg => {
            let agents = learned.as_ref().expect("checkpoint loaded above");
            Box::new(emac_core::maddpg::LearnedProtocol::new(
                &sim,
                &agents.ue_actor.online,
                &agents.bs_actor.online,
            ))
        }
        Method::ContentionFree => Box::new(ContentionFree::new(&sim)?),
        Method::ContentionBased => {
            let p = match p_t {
                Some(p) => p,
                None => {
                    let tuned = tune_pt(&sim, &plan.tune_grid, plan.tune_episodes)?;
                    eprintln!("tuned p_t = {}", tuned.best);
                    tuned.best
                }
            };
            Box::new(ContentionBased::new(&sim, p)?)
        }
    };

    let output = out
        .map(|dir| open_output(dir, &format!("evaluate {}", method.as_str()), &plan))
        .transpose()?;
    let mut trace_bytes = Vec::new();
    let metrics = evaluate_logged(
        &sim,
        &test_seeds(plan.test_episodes),
        protocol.as_mut(),
        &mut |i, log| {
            if trace {
                append_trace(&mut trace_bytes, i, log).expect("in-memory trace write");
            }
            Ok(())
        },
    )?;
    let row = ResultRow::new(method, &sim, &metrics);
    if let (Some(dir), Some((_lock, mut manifest))) = (out, output) {
        write_results(
            &dir.join("results.csv"),
            std::slice::from_ref(&row),
            &manifest.manifest_hash,
        )?;
        if trace {
            write_atomic(&dir.join("trace.jsonl"), &trace_bytes)?;
        }
        let params = snapshot.as_ref().map(encode_checkpoint);
        manifest.finish(params.as_deref());
        manifest.save(&dir.join("manifest.json"))?;
    }
    print_metrics(&row, &metrics);
    Ok(())
}

fn sweep(
    plan_args: &PlanArgs,
    kind: SweepKind,
    out: &Path,
    methods: &[MethodArg],
    repetitions: Option<usize>,
    selector: Option<SelectorArg>,
) -> CliResult<()> {
    let mut plan = base_plan(plan_args)?;
    if let Some(r) = repetitions {
        plan.repetitions = r;
    }
    if let Some(s) = selector {
        plan.selector = s.into();
    }
    let plan = checked(plan)?;
    let methods: Vec<Method> = if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods.iter().map(|&m| m.into()).collect()
    };
    let names: Vec<&str> = methods.iter().map(|m| m.as_str()).collect();
    let label = match kind {
        SweepKind::Arrival => format!("sweep arrival {}", names.join(",")),
        SweepKind::Ues => format!("sweep ues {}", names.join(",")),
    };
    let (_lock, mut manifest) = open_output(out, &label, &plan)?;
    let rows = match kind {
        SweepKind::Arrival => sweep_arrival(&plan, &methods)?,
        SweepKind::Ues => sweep_ues(&plan, &methods)?,
    };
    write_results(&out.join("results.csv"), &rows, &manifest.manifest_hash)?;
    manifest.finish(None);
    manifest.save(&out.join("manifest.json"))?;
    for row in &rows {
        eprintln!(
            "{:<16} N={} p={:<6} goodput {:.4} ± {:.4} (bound {:.4})",
            row.method.as_str(),
            row.n_ue,
            row.arrival_prob,
            row.goodput_mean,
            row.goodput_ci95,
            row.upper_bound
        );
    }
    Ok(())
}

fn tune(plan_args: &PlanArgs, episodes: Option<usize>) -> CliResult<()> {
    let mut plan = base_plan(plan_args)?;
    if let Some(e) = episodes {
        plan.tune_episodes = e;
    }
    let plan = checked(plan)?;
    let result = tune_pt(&plan.sim, &plan.tune_grid, plan.tune_episodes)?;
    println!("p_t,goodput_mean,goodput_ci95,collision_mean,selected");
    for (p, m) in &result.scores {
        println!(
            "{p},{},{},{},{}",
            m.goodput_mean,
            m.goodput_ci95,
            m.collision_mean,
            *p == result.best
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            plan,
            out,
            repetitions,
            episodes,
            selector,
        } => train(&plan, &out, repetitions, episodes, selector),
        Command::Evaluate {
            plan,
            checkpoint,
            method,
            episodes,
            p_t,
            out,
            trace,
        } => evaluate(
            &plan,
            checkpoint.as_deref(),
            method.into(),
            episodes,
            p_t,
            out.as_deref(),
            trace,
        ),
        Command::Sweep {
            plan,
            kind,
            out,
            method,
            repetitions,
            selector,
        } => sweep(&plan, kind, &out, &method, repetitions, selector),
        Command::TunePt { plan, episodes } => tune(&plan, episodes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emac: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
