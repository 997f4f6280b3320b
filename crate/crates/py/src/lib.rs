//! Python module `emac`.
//!
//! Structured values cross the boundary as plain dicts and lists: configs
//! go in as dicts with the same fields as the JSON plan file, records and
//! metrics come back the same way.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use emac_core::baselines;
use emac_core::config::SimConfig;
use emac_core::env::{self, UeAction};
use emac_core::error::{ConfigError, EnvError, HarnessError, PersistError};
use emac_core::harness::{self, ExperimentPlan, Metrics, ProtocolSnapshot};
use emac_core::persist;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config(c) => value_err(c),
        HarnessError::Env(e) => value_err(e),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn persist_err(e: PersistError) -> PyErr {
    match e {
        PersistError::Io(io) => PyIOError::new_err(io.to_string()),
        PersistError::Csv(c) => PyIOError::new_err(c.to_string()),
        other => value_err(other),
    }
}

fn env_err(e: EnvError) -> PyErr {
    value_err(e)
}

fn config_err(e: ConfigError) -> PyErr {
    value_err(e)
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj else {
        return Ok(T::default());
    };
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn sim_config(obj: Option<&Bound<'_, PyAny>>) -> PyResult<SimConfig> {
    let config: SimConfig = from_py(obj)?;
    config.validate().map_err(config_err)?;
    Ok(config)
}

fn plan(obj: Option<&Bound<'_, PyAny>>) -> PyResult<ExperimentPlan> {
    let plan: ExperimentPlan = from_py(obj)?;
    plan.validate().map_err(config_err)?;
    Ok(plan)
}

/// Means and confidence half-widths, without the per-episode samples.
fn summary<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("episodes", m.episodes())?;
    d.set_item("goodput_mean", m.goodput_mean)?;
    d.set_item("goodput_ci95", m.goodput_ci95)?;
    d.set_item("collision_mean", m.collision_mean)?;
    d.set_item("collision_ci95", m.collision_ci95)?;
    Ok(d)
}

fn ue_action(i: usize) -> PyResult<UeAction> {
    UeAction::from_index(i).ok_or_else(|| value_err(format!("UE action {i} not in 0..3")))
}

/// One episode of the uplink cell, stepped phase by phase or a TTI at a time.
#[pyclass(module = "emac")]
struct Env {
    inner: env::Env,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(config: Option<&Bound<'_, PyAny>>, seed: u64) -> PyResult<Self> {
        let inner = env::Env::new(sim_config(config)?, seed).map_err(config_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn tti(&self) -> usize {
        self.inner.tti()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn buffer_lens(&self) -> Vec<usize> {
        self.inner.buffer_lens()
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.config())
    }

    /// Bernoulli arrivals of this TTI, one flag per UE.
    fn sample_arrivals(&mut self) -> PyResult<Vec<bool>> {
        self.inner.sample_arrivals().map_err(env_err)
    }

    /// Puts the chosen actions (0 nothing, 1 transmit, 2 delete) on the
    /// channel and returns what happened.
    fn resolve_uplink(&mut self, py: Python<'_>, actions: Vec<usize>) -> PyResult<Py<PyAny>> {
        let actions = actions
            .into_iter()
            .map(ue_action)
            .collect::<PyResult<Vec<_>>>()?;
        let outcome = self.inner.resolve_uplink(&actions).map_err(env_err)?;
        to_py(py, &outcome)
    }

    /// Applies deletes, computes the reward and closes the TTI.
    fn finish_tti(
        &mut self,
        py: Python<'_>,
        ucm: Vec<usize>,
        dcm: Vec<usize>,
    ) -> PyResult<Py<PyAny>> {
        let record = self.inner.finish_tti(&ucm, &dcm).map_err(env_err)?;
        to_py(py, record)
    }

    /// A whole TTI from already-chosen actions and messages.
    fn step(
        &mut self,
        py: Python<'_>,
        actions: Vec<usize>,
        ucm: Vec<usize>,
        dcm: Vec<usize>,
    ) -> PyResult<Py<PyAny>> {
        let actions = actions
            .into_iter()
            .map(ue_action)
            .collect::<PyResult<Vec<_>>>()?;
        let record = self
            .inner
            .apply_actions_and_reward(&actions, &ucm, &dcm)
            .map_err(env_err)?;
        to_py(py, &record)
    }

    /// DCM each UE receives next TTI when the BS acknowledges deliveries.
    fn delivered_dcm(&self) -> Vec<usize> {
        self.inner.delivered_dcm()
    }

    fn goodput(&self) -> f64 {
        env::goodput(self.inner.log())
    }

    fn collision_rate(&self) -> f64 {
        env::collision_rate(self.inner.log())
    }

    fn log(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.log())
    }
}

/// Trained UE and BS networks with the configuration they were trained for.
#[pyclass(module = "emac")]
struct Checkpoint {
    inner: ProtocolSnapshot,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = persist::load_checkpoint(&path).map_err(persist_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        persist::save_checkpoint(&path, &self.inner).map_err(persist_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, pyo3::types::PyBytes> {
        pyo3::types::PyBytes::new(py, &persist::encode_checkpoint(&self.inner))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        let inner = persist::decode_checkpoint(data).map_err(persist_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn eval_goodput(&self) -> f64 {
        self.inner.eval_goodput
    }

    #[getter]
    fn repetition(&self) -> usize {
        self.inner.repetition
    }

    #[getter]
    fn checkpoint_episode(&self) -> usize {
        self.inner.checkpoint_episode
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Greedy test on the dedicated test episodes.
    #[pyo3(signature = (episodes=5000))]
    fn evaluate<'py>(&self, py: Python<'py>, episodes: usize) -> PyResult<Bound<'py, PyDict>> {
        if episodes == 0 {
            return Err(value_err("episodes >= 1"));
        }
        let m = py
            .detach(|| harness::test_snapshot(&self.inner, episodes))
            .map_err(harness_err)?;
        summary(py, &m)
    }

    /// Runs one greedy episode and returns its log.
    fn rollout(&self, py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
        let log =
            emac_core::protocol::run_episode(&self.inner.config, seed, &mut self.inner.protocol())
                .map_err(harness_err)?;
        to_py(py, &log)
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(n_ue={}, arrival_prob={}, eval_goodput={:.4}, repetition={}, episode={})",
            self.inner.config.n_ue,
            self.inner.config.arrival_prob,
            self.inner.eval_goodput,
            self.inner.repetition,
            self.inner.checkpoint_episode
        )
    }
}

/// Reference experiment plan as a dict.
#[pyfunction]
fn default_plan(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &ExperimentPlan::default())
}

/// `min(p * N, 1)`: delivered SDUs per TTI cannot exceed the offered load
/// or one per TTI.
#[pyfunction]
fn max_goodput(arrival_prob: f64, n_ue: usize) -> f64 {
    env::max_goodput(arrival_prob, n_ue)
}

/// Tests a baseline (`"contention_free"` or `"contention_based"`) on the
/// test episodes. The contention-based `p_t` is tuned when omitted.
#[pyfunction]
#[pyo3(signature = (method, config=None, episodes=5000, p_t=None, tune_episodes=500))]
fn evaluate_baseline<'py>(
    py: Python<'py>,
    method: &str,
    config: Option<&Bound<'py, PyAny>>,
    episodes: usize,
    p_t: Option<f64>,
    tune_episodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let sim = sim_config(config)?;
    if episodes == 0 {
        return Err(value_err("episodes >= 1"));
    }
    let (m, p) = py
        .detach(|| -> Result<(Metrics, Option<f64>), HarnessError> {
            match method {
                "contention_free" => Ok((harness::test_contention_free(&sim, episodes)?, None)),
                "contention_based" => {
                    let p = match p_t {
                        Some(p) => p,
                        None => {
                            baselines::tune_pt(&sim, &baselines::default_pt_grid(), tune_episodes)?
                                .best
                        }
                    };
                    Ok((harness::test_contention_based(&sim, p, episodes)?, Some(p)))
                }
                other => Err(HarnessError::Config(ConfigError::Invariant(
                    if other == "maddpg" {
                        "maddpg needs a Checkpoint"
                    } else {
                        "method is contention_free or contention_based"
                    },
                ))),
            }
        })
        .map_err(harness_err)?;
    let d = summary(py, &m)?;
    d.set_item("method", method)?;
    d.set_item("p_t", p)?;
    d.set_item("upper_bound", env::max_goodput(sim.arrival_prob, sim.n_ue))?;
    Ok(d)
}

/// Grid search of the contention-based transmission probability on the
/// evaluation episodes.
#[pyfunction]
#[pyo3(signature = (config=None, grid=None, episodes=500))]
fn tune_pt<'py>(
    py: Python<'py>,
    config: Option<&Bound<'py, PyAny>>,
    grid: Option<Vec<f64>>,
    episodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let sim = sim_config(config)?;
    let grid = grid.unwrap_or_else(baselines::default_pt_grid);
    let result = py
        .detach(|| baselines::tune_pt(&sim, &grid, episodes))
        .map_err(harness_err)?;
    let d = PyDict::new(py);
    d.set_item("best", result.best)?;
    let scores = result
        .scores
        .iter()
        .map(|(p, m)| {
            let s = summary(py, m)?;
            s.set_item("p_t", p)?;
            Ok(s)
        })
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("scores", scores)?;
    Ok(d)
}

/// Trains every repetition of `plan`, keeps the survivor and tests it.
/// Returns `(survivor, curve, test_metrics)`.
#[pyfunction]
#[pyo3(signature = (plan=None))]
fn train<'py>(
    py: Python<'py>,
    plan: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Checkpoint, Py<PyAny>, Bound<'py, PyDict>)> {
    let plan = self::plan(plan)?;
    let run = py
        .detach(|| harness::run_learned(&plan, &|_| {}))
        .map_err(harness_err)?;
    let curve: Vec<_> = run
        .repetitions
        .iter()
        .flat_map(|r| r.curve.iter().cloned())
        .collect();
    let test = summary(py, &run.test)?;
    Ok((
        Checkpoint {
            inner: run.survivor,
        },
        to_py(py, &curve)?,
        test,
    ))
}

#[pymodule]
pub fn emac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(default_plan, m)?)?;
    m.add_function(wrap_pyfunction!(max_goodput, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(tune_pt, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("ARRIVAL_SWEEP", emac_core::config::ARRIVAL_SWEEP.to_vec())?;
    m.add("UE_SWEEP", emac_core::config::UE_SWEEP.to_vec())?;
    m.add("CHECKPOINT_VERSION", persist::CHECKPOINT_VERSION)?;
    Ok(())
}
