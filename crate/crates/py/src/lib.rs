//! Python bindings for the `ldqn` crate.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ldqn::diagnostics::{self, RateVariant, SpectrumBounds};
use ldqn::experiment::{self, RunConfig};
use ldqn::simulator::{self, CommHistory};
use ldqn::worker::{Absorbed, HessianApprox};
use ldqn::{Error, LimitedMemoryEstimate, Vector};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vector(v: Vec<f64>) -> Vector {
    Vector::from_vec(v)
}

/// Limited-memory Hessian estimate of one worker.
#[pyclass(name = "LimitedMemory")]
struct PyLimitedMemory {
    inner: LimitedMemoryEstimate,
}

#[pymethods]
impl PyLimitedMemory {
    #[new]
    fn new(dim: usize, gamma0: f64, capacity: usize) -> PyResult<Self> {
        Ok(Self { inner: LimitedMemoryEstimate::new(dim, gamma0, capacity).map_err(to_py)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma().get()
    }

    fn __len__(&self) -> usize {
        self.inner.memory().len()
    }

    /// `B x` as a list.
    fn apply(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.inner.dim() {
            return Err(to_py(Error::DimensionMismatch { expected: self.inner.dim(), got: x.len() }));
        }
        Ok(self.inner.apply(&vector(x)).as_slice().to_vec())
    }

    /// Folds in a curvature pair. Returns `(alpha, beta_tilde, rank_two)`,
    /// or `None` when the pair was skipped.
    fn absorb(&mut self, s: Vec<f64>, y: Vec<f64>) -> PyResult<Option<(f64, f64, bool)>> {
        let d = self.inner.dim();
        if s.len() != d || y.len() != d {
            return Err(to_py(Error::DimensionMismatch { expected: d, got: s.len().max(y.len()) }));
        }
        Ok(match self.inner.absorb(&vector(s), &vector(y)) {
            Absorbed::Updated { alpha, beta_tilde, rank_two, .. } => Some((alpha, beta_tilde, rank_two)),
            Absorbed::Skipped(_) => None,
        })
    }

    /// Dense matrix as a list of rows.
    fn to_dense(&self) -> Vec<Vec<f64>> {
        let m = self.inner.to_dense();
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

fn history(comms: Vec<Vec<usize>>) -> PyResult<CommHistory> {
    CommHistory::from_lists(comms).map_err(to_py)
}

/// `(d, D)` for worker `i` at update `t`.
#[pyfunction]
fn delays(comms: Vec<Vec<usize>>, t: usize, i: usize) -> PyResult<(usize, usize)> {
    let h = history(comms)?;
    if i >= h.n_workers() {
        return Err(PyValueError::new_err(format!("no worker {i}")));
    }
    simulator::delays(&h, t, i).map_err(to_py)
}

/// Epoch start times implied by per-worker communication lists.
#[pyfunction]
fn compute_epochs(comms: Vec<Vec<usize>>, horizon: usize) -> PyResult<Vec<usize>> {
    Ok(simulator::compute_epochs(&history(comms)?, horizon).starts)
}

#[pyfunction]
fn condition13_threshold(kappa: f64) -> f64 {
    diagnostics::condition13_threshold(kappa)
}

/// `(lo, hi)` of the admissible stepsize interval.
#[pyfunction]
fn stepsize_window(eps_d: f64, eps_u: f64, kappa: f64) -> (f64, f64) {
    let w = diagnostics::stepsize_window(eps_d, eps_u, kappa);
    (w.lo, w.hi)
}

#[pyfunction]
#[pyo3(signature = (n, lambda_d, lambda_u, eta, mu, l, displayed = false))]
fn theoretical_rate(n: usize, lambda_d: f64, lambda_u: f64, eta: f64, mu: f64, l: f64, displayed: bool) -> f64 {
    let variant = if displayed { RateVariant::Displayed } else { RateVariant::Derivation };
    diagnostics::theoretical_rate(n, SpectrumBounds { lambda_d, lambda_u }, eta, mu, l, variant)
}

/// Runs a `key=value` configuration in memory. Returns the trace as CSV text
/// and the report as JSON text.
#[pyfunction]
fn run(config: &str) -> PyResult<(String, String)> {
    let cfg = RunConfig::from_text(config).map_err(to_py)?;
    let exec = experiment::execute(&cfg).map_err(to_py)?;
    let report = serde_json::to_string(&exec.report).map_err(|e| to_py(e.into()))?;
    Ok((exec.output.trace.to_csv(), report))
}

/// Runs a configuration and writes its output files; returns the directory.
#[pyfunction]
fn run_experiment(config: &str) -> PyResult<String> {
    let cfg = RunConfig::from_text(config).map_err(to_py)?;
    experiment::run_experiment(&cfg).map(|p| p.display().to_string()).map_err(to_py)
}

#[pymodule]
fn ldqn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLimitedMemory>()?;
    m.add_function(wrap_pyfunction!(delays, m)?)?;
    m.add_function(wrap_pyfunction!(compute_epochs, m)?)?;
    m.add_function(wrap_pyfunction!(condition13_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(stepsize_window, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_rate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
