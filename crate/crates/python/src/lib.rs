//! Python bindings: `import feudalq_py`.
//!
//! Tables cross the boundary as lists of rows. Structured results (training
//! outcomes, certificates, summaries) come back as plain dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use feudalq::envs::{flip_feudal, random_feudal, FourRoomsConfig, RandomFeudalSpec};
use feudalq::equilibrium::{stackelberg_candidates, verify_nash, verify_stackelberg};
use feudalq::feudal::{compose_high_dynamics, high_reward_table};
use feudalq::harness::{run_experiment, run_suite, EnvironmentSpec, ExperimentConfig, Suite};
use feudalq::oracle::solve_coupled;
use feudalq::qlearning::{step_sizes as core_step_sizes, train_feudal, StepSizeSchedule};
use feudalq::{QTablePair, RngStream, Table, TrainingConfig};

create_exception!(feudalq_py, FeudalqError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    FeudalqError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn table(rows: Vec<Vec<f64>>) -> PyResult<Table> {
    Table::from_rows(rows).map_err(err)
}

/// A feudal decomposition of a finite MDP.
#[pyclass(name = "FeudalProblem", module = "feudalq_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: feudalq::FeudalProblem,
}

#[pymethods]
impl PyProblem {
    /// Two-state flip MDP with `T = 2`.
    #[staticmethod]
    fn flip() -> Self {
        Self { inner: flip_feudal() }
    }

    /// The Four Rooms grid; `layout` takes the fields of the layout config.
    #[staticmethod]
    #[pyo3(signature = (epoch_length = 10, gamma_low = 0.9, layout = None))]
    fn four_rooms(py: Python<'_>, epoch_length: usize, gamma_low: f64, layout: Option<Bound<'_, PyAny>>) -> PyResult<Self> {
        let layout: FourRoomsConfig = match layout {
            Some(l) => from_py(py, &l)?,
            None => FourRoomsConfig::default(),
        };
        Self::from_spec(EnvironmentSpec::FourRooms { layout, epoch_length, gamma_low })
    }

    /// Random instance; `spec` overrides fields of the default random spec.
    #[staticmethod]
    #[pyo3(signature = (seed, spec = None))]
    fn random(py: Python<'_>, seed: u64, spec: Option<Bound<'_, PyAny>>) -> PyResult<Self> {
        let spec: RandomFeudalSpec = match spec {
            Some(s) => from_py(py, &s)?,
            None => RandomFeudalSpec::default(),
        };
        Ok(Self { inner: random_feudal(&spec, seed) })
    }

    /// Environment spec dict as in the `[environment]` config table.
    #[staticmethod]
    fn from_environment(py: Python<'_>, spec: Bound<'_, PyAny>) -> PyResult<Self> {
        Self::from_spec(from_py(py, &spec)?)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: feudalq::FeudalProblem::load_json(path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(path).map_err(err)
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    #[getter]
    fn num_goals(&self) -> usize {
        self.inner.num_goals()
    }

    #[getter]
    fn goals(&self) -> Vec<usize> {
        self.inner.goals().to_vec()
    }

    #[getter]
    fn epoch_length(&self) -> usize {
        self.inner.epoch_length()
    }

    #[getter]
    fn num_low_states(&self) -> usize {
        self.inner.num_low_states()
    }

    #[getter]
    fn gamma_high(&self) -> f64 {
        self.inner.gamma_high()
    }

    #[getter]
    fn gamma_low(&self) -> f64 {
        self.inner.gamma_low()
    }

    /// Index of the low-level state `(s, goal, clock)`.
    fn low_index(&self, state: usize, goal: usize, clock: usize) -> usize {
        self.inner.low_space().index_of(state, goal, clock)
    }

    fn __repr__(&self) -> String {
        format!(
            "FeudalProblem(states={}, actions={}, goals={}, epoch_length={})",
            self.inner.num_states(),
            self.inner.num_actions(),
            self.inner.num_goals(),
            self.inner.epoch_length()
        )
    }
}

impl PyProblem {
    fn from_spec(spec: EnvironmentSpec) -> PyResult<Self> {
        Ok(Self { inner: spec.build().map_err(err)?.problem })
    }
}

/// Exact coupled fixed point `(Q^h*, Q^l*)` by alternating best responses.
#[pyfunction]
#[pyo3(signature = (problem, tol = 1e-9))]
fn solve<'py>(py: Python<'py>, problem: &PyProblem, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let sol = py.detach(|| solve_coupled(&problem.inner, tol)).map_err(err)?;
    to_py(py, &sol)
}

/// High-level kernel `P[s][goal][s']` induced by a low-level policy.
#[pyfunction]
fn compose_high(problem: &PyProblem, low_policy: Vec<Vec<f64>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let k = compose_high_dynamics(&problem.inner, &table(low_policy)?).map_err(err)?;
    Ok((0..k.num_from())
        .map(|s| (0..k.num_actions()).map(|g| k.row(s, g).to_vec()).collect())
        .collect())
}

/// Epoch reward table `r^h(s, goal)` induced by a low-level policy.
#[pyfunction]
fn high_reward(problem: &PyProblem, low_policy: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(high_reward_table(&problem.inner, &table(low_policy)?).map_err(err)?.to_rows())
}

/// Trains both levels. `config` holds training-config fields; the rest keep their defaults.
#[pyfunction]
#[pyo3(signature = (problem, config = None, seed = None))]
fn train<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    config: Option<Bound<'py, PyAny>>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg: TrainingConfig = match config {
        Some(c) => from_py(py, &c)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let out = py
        .detach(|| train_feudal(&problem.inner, &cfg, &mut RngStream::new(cfg.seed)))
        .map_err(err)?;
    to_py(py, &out)
}

/// Nash certificate for the pair `(high, low)`.
#[pyfunction]
#[pyo3(signature = (problem, high, low, tol = 1e-8))]
fn nash<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    high: Vec<Vec<f64>>,
    low: Vec<Vec<f64>>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let pair = QTablePair { high: table(high)?, low: table(low)? };
    to_py(py, &verify_nash(&pair, &problem.inner, tol).map_err(err)?)
}

/// Stackelberg certificate against every pure high-level policy.
#[pyfunction]
#[pyo3(signature = (problem, high, low, tol = 1e-8))]
fn stackelberg<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    high: Vec<Vec<f64>>,
    low: Vec<Vec<f64>>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let pair = QTablePair { high: table(high)?, low: table(low)? };
    let p = &problem.inner;
    let cert = py
        .detach(|| {
            let candidates = stackelberg_candidates(p, (tol * 1e-3).max(1e-13))?;
            verify_stackelberg(&pair, p, &candidates, tol)
        })
        .map_err(err)?;
    to_py(py, &cert)
}

/// `(alpha(n), beta(n))` for exponents `a < b`.
#[pyfunction]
#[pyo3(signature = (a, b, n, offset = 1))]
fn step_sizes(a: f64, b: f64, n: u64, offset: u64) -> PyResult<(f64, f64)> {
    let s = StepSizeSchedule::new(a, b, offset).map_err(err)?;
    Ok(core_step_sizes(&s, n))
}

/// Runs a TOML/JSON experiment config and returns its summary.
#[pyfunction]
#[pyo3(signature = (config, seed = None, output_dir = None))]
fn run<'py>(
    py: Python<'py>,
    config: PathBuf,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = ExperimentConfig::load(&config).map_err(err)?;
    if let Some(seed) = seed {
        cfg.training.seed = seed;
    }
    if let Some(out) = output_dir {
        cfg.output_dir = out;
    }
    let summary = py.detach(|| run_experiment(&cfg)).map_err(err)?;
    to_py(py, &summary)
}

/// One verification battery: "contraction", "martingale", "scaled" or "ode".
#[pyfunction]
fn verify<'py>(py: Python<'py>, suite: &str) -> PyResult<Bound<'py, PyAny>> {
    let suite = match suite {
        "contraction" => Suite::Contraction,
        "martingale" => Suite::Martingale,
        "scaled" => Suite::Scaled,
        "ode" => Suite::Ode,
        other => return Err(err(format!("unknown suite {other:?}"))),
    };
    let rep = py.detach(|| run_suite(suite)).map_err(err)?;
    to_py(py, &rep)
}

#[pymodule]
fn feudalq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FeudalqError", m.py().get_type::<FeudalqError>())?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(compose_high, m)?)?;
    m.add_function(wrap_pyfunction!(high_reward, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(nash, m)?)?;
    m.add_function(wrap_pyfunction!(stackelberg, m)?)?;
    m.add_function(wrap_pyfunction!(step_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
