//! Python bindings: scenario validation, equilibria, closed-loop runs and the
//! QP solver.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use freqctl::dynamics::compute_equilibrium;
use freqctl::harness::{load_scenario, run_experiment, RunMode, Scenario};
use freqctl::qp::{self, CsrMatrix, QpProblem, QpSettings};

fn scenario(path: &str) -> PyResult<Scenario> {
    load_scenario(Path::new(path)).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Parses a scenario file (or `builtin:ieee39`) and returns its sizes.
#[pyfunction]
pub fn validate<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyDict>> {
    let s = scenario(path)?;
    let out = PyDict::new(py);
    out.set_item("name", &s.name)?;
    out.set_item("buses", s.model.n_buses())?;
    out.set_item("lines", s.model.n_lines())?;
    let labels =
        |idx: Vec<usize>| -> Vec<u32> { idx.into_iter().map(|i| s.model.label(i)).collect() };
    out.set_item("controlled", labels(s.model.controlled()))?;
    out.set_item("constrained", labels(s.model.constrained()))?;
    out.set_item("regions", s.regions.len())?;
    Ok(out)
}

/// Synchronized frequency and flows reached under the settled injections.
#[pyfunction]
pub fn equilibrium<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyDict>> {
    let s = scenario(path)?;
    let eq = compute_equilibrium(&s.model, &s.signal.settled(), &s.initial.f)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("omega", eq.omega)?;
    out.set_item("f", eq.f)?;
    Ok(out)
}

/// Runs a scenario and returns the log (`times`, `omega`, `inputs`, one row
/// per logged instant) with the run summary as TOML text.
#[pyfunction]
#[pyo3(signature = (path, mode = "distributed", t_end = None, warm_start = None))]
pub fn simulate<'py>(
    py: Python<'py>,
    path: &str,
    mode: &str,
    t_end: Option<f64>,
    warm_start: Option<bool>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = scenario(path)?;
    let mode: RunMode = mode.parse().map_err(PyValueError::new_err)?;
    let x = py
        .detach(|| run_experiment(&s, mode, t_end, warm_start))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let log = &x.run.log;
    let out = PyDict::new(py);
    out.set_item(
        "labels",
        (0..s.model.n_buses())
            .map(|i| s.model.label(i))
            .collect::<Vec<_>>(),
    )?;
    out.set_item("times", &log.times)?;
    out.set_item("omega", &log.omega)?;
    out.set_item("inputs", &log.inputs)?;
    out.set_item("summary", x.summary.to_toml())?;
    Ok(out)
}

fn csr(rows: Vec<Vec<f64>>, ncols: usize) -> PyResult<CsrMatrix> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!(
            "every row needs {ncols} entries"
        )));
    }
    Ok(if rows.is_empty() {
        CsrMatrix::zeros(0, ncols)
    } else {
        CsrMatrix::from_dense(&rows)
    })
}

/// Solves `min 0.5 x'Px + q'x  s.t.  l <= Ax <= u` from dense row lists.
#[pyfunction]
#[pyo3(name = "solve_qp")]
pub fn solve_qp_py<'py>(
    py: Python<'py>,
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    a: Vec<Vec<f64>>,
    l: Vec<f64>,
    u: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let n = q.len();
    let problem = QpProblem::new(csr(p, n)?, q, csr(a, n)?, l, u);
    let r = qp::solve(&problem, &QpSettings::default(), None)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("x", r.x)?;
    out.set_item("y", r.y)?;
    out.set_item("objective", r.objective)?;
    out.set_item("status", format!("{:?}", r.status))?;
    out.set_item("iterations", r.iterations)?;
    Ok(out)
}

#[pymodule]
fn pyfreqctl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp_py, m)?)?;
    Ok(())
}
