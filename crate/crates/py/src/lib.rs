//! Python bindings. Every experiment writes to an output directory exactly as
//! the command-line tool does and returns the stored artifact as a dict.

use std::path::PathBuf;

use greedy_recon::artifact::RunArtifact;
use greedy_recon::config::{ExperimentConfig, TruthConfig};
use greedy_recon::experiments::{self, Outcome};
use greedy_recon::forward::solve_semilinear;
use greedy_recon::grid::{LaplaceOperator, VectorField2};
use greedy_recon::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidArtifact(_) | Error::Serde(_) => {
            PyValueError::new_err(msg)
        }
        Error::NumericalFailure(_) | Error::OracleFailure { .. } | Error::GreedyFailure { .. } => {
            PyRuntimeError::new_err(msg)
        }
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn load_config(config: Option<&str>, seed: Option<u64>) -> greedy_recon::Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(text) => ExperimentConfig::from_toml_str(text)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `f` without the GIL on a pool of `threads` workers (0: automatic).
fn run<T: Send>(
    py: Python<'_>,
    threads: usize,
    f: impl FnOnce() -> greedy_recon::Result<T> + Send,
) -> PyResult<T> {
    py.detach(|| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(f)
    })
    .map_err(py_err)
}

#[derive(Serialize)]
struct WithStatus<'a> {
    partial: bool,
    #[serde(flatten)]
    artifact: &'a RunArtifact,
}

fn outcome(py: Python<'_>, o: Outcome) -> PyResult<Py<PyAny>> {
    to_py(
        py,
        &WithStatus {
            partial: o.partial,
            artifact: &o.artifact,
        },
    )
}

/// Default configuration as TOML text.
#[pyfunction]
fn default_config() -> PyResult<String> {
    ExperimentConfig::default().to_toml_string().map_err(py_err)
}

/// Greedy control design; writes `out/artifact.json` and `out/greedy.csv`.
#[pyfunction]
#[pyo3(signature = (out, config=None, seed=None, threads=0))]
fn greedy(py: Python<'_>, out: PathBuf, config: Option<&str>, seed: Option<u64>, threads: usize) -> PyResult<Py<PyAny>> {
    let cfg = load_config(config, seed).map_err(py_err)?;
    let o = run(py, threads, || experiments::cmd_greedy(&cfg, &out))?;
    outcome(py, o)
}

/// Identification from the controls stored in `out`.
#[pyfunction]
#[pyo3(signature = (out, truth=None, threads=0))]
fn identify(py: Python<'_>, out: PathBuf, truth: Option<String>, threads: usize) -> PyResult<Py<PyAny>> {
    let o = run(py, threads, || experiments::cmd_identify(&out, truth.map(TruthConfig::Named)))?;
    outcome(py, o)
}

/// Identification from random spatially constant controls.
#[pyfunction]
#[pyo3(signature = (out, config=None, seed=None, count=None, threads=0))]
fn baseline(
    py: Python<'_>,
    out: PathBuf,
    config: Option<&str>,
    seed: Option<u64>,
    count: Option<usize>,
    threads: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = load_config(config, seed).map_err(py_err)?;
    let o = run(py, threads, || experiments::cmd_baseline(&cfg, &out, count))?;
    outcome(py, o)
}

/// Objective slice over two coefficients of a stored identification.
#[pyfunction]
#[pyo3(signature = (out, pair=None, threads=0))]
fn landscape(py: Python<'_>, out: PathBuf, pair: Option<(String, String)>, threads: usize) -> PyResult<Py<PyAny>> {
    let o = run(py, threads, || experiments::cmd_landscape(&out, pair.map(|(a, b)| [a, b])))?;
    outcome(py, o)
}

/// Rewrites `out/taylor.csv` for a stored identification.
#[pyfunction]
fn taylor(py: Python<'_>, out: PathBuf) -> PyResult<Py<PyAny>> {
    let o = run(py, 1, || experiments::cmd_taylor(&out))?;
    outcome(py, o)
}

/// Lipschitz ratio statistics of the coefficient-to-state map.
#[pyfunction]
#[pyo3(signature = (out, config=None, seed=None, threads=0))]
fn stability_probe(
    py: Python<'_>,
    out: PathBuf,
    config: Option<&str>,
    seed: Option<u64>,
    threads: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = load_config(config, seed).map_err(py_err)?;
    let o = run(py, threads, || experiments::cmd_stability_probe(&cfg, &out))?;
    outcome(py, o)
}

/// Every experiment in sequence, as `greedy-recon all`.
#[pyfunction]
#[pyo3(signature = (out, config=None, seed=None, threads=0))]
fn run_all(py: Python<'_>, out: PathBuf, config: Option<&str>, seed: Option<u64>, threads: usize) -> PyResult<Py<PyAny>> {
    let cfg = load_config(config, seed).map_err(py_err)?;
    let o = run(py, threads, || experiments::cmd_all(&cfg, &out))?;
    outcome(py, o)
}

/// Discrete L2 errors of the forward solver against the manufactured
/// solution on `n`, `2n` and `4n` cells, with successive ratios.
#[pyfunction]
#[pyo3(signature = (n=16, eta=0.5, theta=1.0, config=None))]
fn manufactured_convergence(py: Python<'_>, n: usize, eta: f64, theta: f64, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = load_config(config, None).map_err(py_err)?;
    let r = run(py, 1, || experiments::manufactured_convergence(&cfg, eta, theta, n))?;
    to_py(py, &r)
}

/// State `(y1, y2)` for a spatially constant control, as row-major nodal
/// values on the `(n + 1) x (n + 1)` grid including the boundary.
#[pyfunction]
#[pyo3(signature = (control, config=None))]
fn solve_state(py: Python<'_>, control: (f64, f64), config: Option<&str>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = load_config(config, None).map_err(py_err)?;
    run(py, 1, || {
        let grid = cfg.grid()?;
        let op = LaplaceOperator::new(grid)?;
        let eps = VectorField2::constant(grid, [control.0, control.1]);
        let (y, _) = solve_semilinear(&op, &cfg.truth()?, &eps, &cfg.fixed_point())?;
        Ok((y.u1.values().to_vec(), y.u2.values().to_vec()))
    })
}

#[pymodule]
#[pyo3(name = "greedy_recon")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(greedy, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(landscape, m)?)?;
    m.add_function(wrap_pyfunction!(taylor, m)?)?;
    m.add_function(wrap_pyfunction!(stability_probe, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(manufactured_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(solve_state, m)?)?;
    Ok(())
}
