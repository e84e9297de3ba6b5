//! Python bindings. Structured results are returned as plain dicts and lists.

use compsel::estimators::policy_gradient as estimate_gradient;
use compsel::ingest::{self, IngestConfig, StudentSchema};
use compsel::learner::{self as core_learner, InitBeta, LearnConfig, Method, RctCovariates};
use compsel::sim::{default_truncation, recorded_round, stochastic_fpi as core_fpi, SimConfig};
use compsel::{scenarios, AgentType, Capacity, CovariateBox, NoiseModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: compsel::Error) -> PyErr {
    use compsel::Error as E;
    match e {
        E::NonConvergence { .. } | E::Rank(_) | E::IllConditioned { .. } | E::DegenerateStep(_) | E::Bracket(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn capacity(q: f64) -> PyResult<Capacity> {
    Capacity::new(q).map_err(to_py)
}

/// Finite distribution over agent types.
#[pyclass(module = "compsel_py", frozen)]
#[derive(Clone)]
pub struct TypeDistribution {
    inner: compsel::TypeDistribution,
}

#[pymethods]
impl TypeDistribution {
    /// Two-covariate benchmark with naturals and gamers.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn toy(seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: scenarios::toy(seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (d, seed = 0))]
    fn high_dim(d: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: scenarios::high_dim(d, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: compsel::TypeDistribution::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: compsel::TypeDistribution::load(path).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn sigma(&self) -> f64 {
        self.inner.noise().sigma()
    }

    fn regime(&self) -> String {
        format!("{:?}", self.inner.regime())
    }

    #[pyo3(signature = (beta, q = 0.7))]
    fn raw_quantile(&self, beta: Vec<f64>, q: f64) -> PyResult<f64> {
        self.inner.raw_quantile(&beta, capacity(q)?).map_err(to_py)
    }

    /// Mean-field equilibrium as a dict with `s_star`, `residual`, `kappa_hat`, ...
    #[pyo3(signature = (beta, q = 0.7))]
    fn equilibrium(&self, py: Python<'_>, beta: Vec<f64>, q: f64) -> PyResult<Py<PyAny>> {
        let eq = self.inner.equilibrium(&beta, capacity(q)?).map_err(to_py)?;
        to_dict(py, &eq)
    }

    fn policy_value(&self, beta: Vec<f64>, s: f64, r: f64) -> PyResult<f64> {
        self.inner.policy_value(&beta, s, r).map_err(to_py)
    }

    #[pyo3(signature = (beta, q = 0.7))]
    fn equilibrium_policy_value(&self, beta: Vec<f64>, q: f64) -> PyResult<f64> {
        self.inner.equilibrium_policy_value(&beta, capacity(q)?).map_err(to_py)
    }

    #[pyo3(signature = (beta, q = 0.7))]
    fn analytic_policy_gradient(&self, py: Python<'_>, beta: Vec<f64>, q: f64) -> PyResult<Py<PyAny>> {
        let g = self.inner.analytic_policy_gradient(&beta, capacity(q)?).map_err(to_py)?;
        to_dict(py, &g)
    }

    fn __repr__(&self) -> String {
        format!(
            "TypeDistribution(types={}, dim={}, sigma={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.noise().sigma()
        )
    }
}

/// Best response of one agent with quadratic cost `g` to `(beta, s)`.
#[pyfunction]
#[pyo3(signature = (z, g, beta, s, sigma, half_width = 100.0))]
fn best_response(
    py: Python<'_>,
    z: Vec<f64>,
    g: Vec<f64>,
    beta: Vec<f64>,
    s: f64,
    sigma: f64,
    half_width: f64,
) -> PyResult<Py<PyAny>> {
    let agent = AgentType::new(z.clone(), g, 0.0, 0.0).map_err(to_py)?;
    let noise = NoiseModel::new(sigma).map_err(to_py)?;
    let bbox = CovariateBox::new(
        z.iter().map(|v| v - half_width).collect(),
        z.iter().map(|v| v + half_width).collect(),
    )
    .map_err(to_py)?;
    let br = compsel::best_response(&agent, &beta, s, &noise, &bbox).map_err(to_py)?;
    to_dict(py, &br)
}

fn sim_config(
    dist: &compsel::TypeDistribution,
    n: usize,
    q: f64,
    seed: u64,
    b_beta: f64,
    b_s: f64,
) -> PyResult<SimConfig> {
    let q = capacity(q)?;
    let trunc = default_truncation(dist, q).map_err(to_py)?;
    Ok(SimConfig::new(n, q, seed)
        .with_perturbation(b_beta, b_s)
        .with_truncation(trunc))
}

/// Threshold trace of the finite-population dynamics.
#[pyfunction]
#[pyo3(signature = (dist, beta, n, steps, seed, q = 0.7, s0 = None, b_beta = 0.0, b_s = 0.0))]
#[allow(clippy::too_many_arguments)]
fn stochastic_fpi(
    dist: &TypeDistribution,
    beta: Vec<f64>,
    n: usize,
    steps: usize,
    seed: u64,
    q: f64,
    s0: Option<f64>,
    b_beta: f64,
    b_s: f64,
) -> PyResult<Vec<f64>> {
    let d = &dist.inner;
    let cfg = sim_config(d, n, q, seed, b_beta, b_s)?;
    let s0 = match s0 {
        Some(s) => s,
        None => d.raw_quantile(&beta, cfg.q).map_err(to_py)?,
    };
    core_fpi(d, &beta, &cfg, s0, steps).map_err(to_py)
}

/// One perturbed round at `s_prev` and its gradient estimates.
#[pyfunction]
#[pyo3(signature = (dist, beta, n, seed, s_prev, q = 0.7, b_beta = 0.025, b_s = 0.2, bandwidth = None))]
#[allow(clippy::too_many_arguments)]
fn estimate_policy_gradient(
    py: Python<'_>,
    dist: &TypeDistribution,
    beta: Vec<f64>,
    n: usize,
    seed: u64,
    s_prev: f64,
    q: f64,
    b_beta: f64,
    b_s: f64,
    bandwidth: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let cfg = sim_config(&dist.inner, n, q, seed, b_beta, b_s)?;
    let rec = recorded_round(&dist.inner, &beta, &cfg, s_prev).map_err(to_py)?;
    let report = estimate_gradient(&rec, bandwidth).map_err(to_py)?;
    to_dict(py, &report)
}

/// Projected gradient ascent. `method` is "competition" or "strategy".
#[pyfunction]
#[pyo3(signature = (dist, method, n, epochs, lr, seed, q = 0.7, init_beta = None, equilibrate_steps = 50, b_beta = 0.025, b_s = 0.2))]
#[allow(clippy::too_many_arguments)]
fn learn(
    py: Python<'_>,
    dist: &TypeDistribution,
    method: &str,
    n: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
    q: f64,
    init_beta: Option<Vec<f64>>,
    equilibrate_steps: usize,
    b_beta: f64,
    b_s: f64,
) -> PyResult<Py<PyAny>> {
    let method = match method {
        "competition" => Method::CompetitionAware,
        "strategy" => Method::StrategyAware,
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let sim = sim_config(&dist.inner, n, q, seed, b_beta, b_s)?;
    let init = init_beta.map(InitBeta::Given).unwrap_or(InitBeta::Random);
    let mut cfg = LearnConfig::new(sim, method, lr, epochs, init);
    cfg.equilibrate_steps = equilibrate_steps;
    let trace = py
        .detach(|| core_learner::learn(&dist.inner, &cfg))
        .map_err(to_py)?;
    to_dict(py, &trace)
}

/// Criterion from a randomized trial that ignores strategic responses.
#[pyfunction]
#[pyo3(signature = (dist, n_rct, seed, noisy = false))]
fn capacity_baseline(dist: &TypeDistribution, n_rct: usize, seed: u64, noisy: bool) -> PyResult<Vec<f64>> {
    let cov = if noisy { RctCovariates::Noisy } else { RctCovariates::Raw };
    core_learner::capacity_aware_baseline(&dist.inner, n_rct, cov, seed).map_err(to_py)
}

/// Reads a student CSV and returns `(distribution, round_trip_error)`.
#[pyfunction]
#[pyo3(signature = (path, seed = 0, k_clusters = 8))]
fn ingest_csv(path: &str, seed: u64, k_clusters: usize) -> PyResult<(TypeDistribution, f64)> {
    let rows = ingest::load_student_csv(path, &StudentSchema::nels(), &ingest::nels_imputation()).map_err(to_py)?;
    let mut cfg = IngestConfig::nels(seed);
    cfg.k_clusters = k_clusters;
    let out = ingest::ingest(&rows, &cfg).map_err(to_py)?;
    Ok((TypeDistribution { inner: out.distribution }, out.roundtrip_error))
}

#[pymodule]
fn compsel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TypeDistribution>()?;
    m.add_function(wrap_pyfunction!(best_response, m)?)?;
    m.add_function(wrap_pyfunction!(stochastic_fpi, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_policy_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(ingest_csv, m)?)?;
    Ok(())
}
