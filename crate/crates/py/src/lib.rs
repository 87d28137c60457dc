//! Python bindings: grids, connections, flow runs and the Jordan–Hölder
//! tools. Matrices cross the boundary as nested lists of Python complex.

use std::path::PathBuf;

use hflab::bundle::{flatness_residual, make_constant_connection, monodromies};
use hflab::experiment::{jh_from_json, run_experiment, ExperimentConfig};
use hflab::flow::{energy, run_flow, FlowConfig, Integrator};
use hflab::jholder::{graded as jh_graded, Tolerances};
use hflab::matcore::{expm as m_expm, logm_principal, BackgroundMetric};
use hflab::verify::iso_check as v_iso_check;
use hflab::{BaseGrid, CMat, ConnectionField, GradedObject, RepFamily, TieBreak};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type PyMat = Vec<Vec<Complex64>>;

fn err(e: hflab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_cmat(m: PyMat) -> PyResult<CMat> {
    CMat::from_rows(&m).map_err(err)
}

fn from_cmat(m: &CMat) -> PyMat {
    m.to_rows()
}

fn metric(k: Option<PyMat>, rank: usize) -> PyResult<BackgroundMetric> {
    match k {
        Some(k) => BackgroundMetric::new(to_cmat(k)?).map_err(err),
        None => Ok(BackgroundMetric::identity(rank)),
    }
}

fn tie_break(s: &str) -> PyResult<TieBreak> {
    match s {
        "ascending" => Ok(TieBreak::Ascending),
        "descending" => Ok(TieBreak::Descending),
        _ => Err(PyValueError::new_err(format!("unknown tie break {s:?}"))),
    }
}

/// Periodic grid on the unit circle or the unit square torus.
#[pyclass(name = "BaseGrid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBaseGrid(BaseGrid);

#[pymethods]
impl PyBaseGrid {
    #[staticmethod]
    fn circle(n: usize) -> PyResult<Self> {
        BaseGrid::circle(n).map(Self).map_err(err)
    }

    #[staticmethod]
    fn torus(nx: usize, ny: usize) -> PyResult<Self> {
        BaseGrid::torus(nx, ny).map(Self).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        match self.0 {
            BaseGrid::Circle { n } => format!("BaseGrid.circle({n})"),
            BaseGrid::Torus { nx, ny } => format!("BaseGrid.torus({nx}, {ny})"),
        }
    }
}

/// Connection `d + A` on the trivial bundle over a grid.
#[pyclass(name = "Connection", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConnection(ConnectionField);

#[pymethods]
impl PyConnection {
    /// Constant coefficients, one matrix per base direction.
    #[staticmethod]
    fn constant(grid: &PyBaseGrid, coeffs: Vec<PyMat>) -> PyResult<Self> {
        let c = coeffs.into_iter().map(to_cmat).collect::<PyResult<Vec<_>>>()?;
        make_constant_connection(grid.0, &c).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        ConnectionField::from_json_str(s).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json_string().map_err(err)
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.rank()
    }

    #[getter]
    fn grid(&self) -> PyBaseGrid {
        PyBaseGrid(*self.0.grid())
    }

    /// Coefficient matrix of direction `dir` at grid point `p`.
    fn coeff(&self, dir: usize, p: usize) -> PyResult<PyMat> {
        self.0
            .coeffs()
            .get(dir)
            .and_then(|c| c.get(p))
            .map(from_cmat)
            .ok_or_else(|| PyValueError::new_err("index out of range"))
    }

    #[pyo3(signature = (metric=None))]
    fn energy(&self, metric: Option<PyMat>) -> PyResult<f64> {
        Ok(energy(&self.0, &self::metric(metric, self.0.rank())?))
    }

    fn flatness_residual(&self) -> f64 {
        flatness_residual(&self.0)
    }

    /// Holonomy generators at the basepoint (grid point 0).
    fn monodromy(&self) -> PyResult<Vec<PyMat>> {
        Ok(monodromies(&self.0, 0).map_err(err)?.generators.iter().map(from_cmat).collect())
    }
}

/// Final state and monitor series of a flow run.
#[pyclass(name = "FlowResult", frozen)]
struct PyFlowResult {
    #[pyo3(get)]
    connection: PyConnection,
    #[pyo3(get)]
    t: f64,
    #[pyo3(get)]
    termination: String,
    #[pyo3(get)]
    failure: Option<String>,
    #[pyo3(get)]
    accepted_steps: u64,
    csv: String,
}

#[pymethods]
impl PyFlowResult {
    /// Monitor series in the CSV layout written by the command-line runner.
    fn monitors_csv(&self) -> String {
        self.csv.clone()
    }
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (connection, metric=None, t_max=200.0, dt_init=1e-4, tol_tension=1e-6, adaptive=true, integrator="rk4"))]
fn flow(
    py: Python<'_>,
    connection: &PyConnection,
    metric: Option<PyMat>,
    t_max: f64,
    dt_init: f64,
    tol_tension: f64,
    adaptive: bool,
    integrator: &str,
) -> PyResult<PyFlowResult> {
    let k = self::metric(metric, connection.0.rank())?;
    let integrator = match integrator {
        "rk4" => Integrator::Rk4,
        "euler" => Integrator::Euler,
        other => return Err(PyValueError::new_err(format!("unknown integrator {other:?}"))),
    };
    let cfg = FlowConfig { t_max, dt_init, tol_tension, adaptive, integrator, ..FlowConfig::default() };
    cfg.validate().map_err(err)?;
    let a0 = connection.0.clone();
    let (state, out) =
        py.detach(|| run_flow(&a0, &k, &cfg)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let termination = serde_json::to_value(out.termination)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    Ok(PyFlowResult {
        connection: PyConnection(state.a),
        t: state.t,
        termination,
        failure: out.failure,
        accepted_steps: out.accepted_steps,
        csv: out.monitors.to_csv(),
    })
}

/// Graded characters of a commuting family, one tuple per summand.
#[pyfunction]
#[pyo3(signature = (matrices, tie_break="ascending"))]
fn graded(matrices: Vec<PyMat>, tie_break: &str) -> PyResult<Vec<Vec<Complex64>>> {
    let tol = Tolerances::exact();
    let gens = matrices.into_iter().map(to_cmat).collect::<PyResult<Vec<_>>>()?;
    let fam = RepFamily::new(gens, &tol).map_err(err)?;
    let k = BackgroundMetric::identity(fam.rank());
    Ok(jh_graded(&fam, &k, &tol, self::tie_break(tie_break)?).map_err(err)?.characters)
}

/// Graded object as JSON, from the same input the `jh` command reads.
#[pyfunction]
fn jh_json(text: &str) -> PyResult<String> {
    jh_from_json(text).and_then(|g| g.to_json_string()).map_err(err)
}

/// Verdict of comparing a limit family with graded characters, as a dict
/// with keys `verdict`, `semisimple`, `spectra_match` and `max_distance`.
#[pyfunction]
fn iso_check<'py>(
    py: Python<'py>,
    limit: Vec<PyMat>,
    characters: Vec<Vec<Complex64>>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let tol = Tolerances::limit();
    let gens = limit.into_iter().map(to_cmat).collect::<PyResult<Vec<_>>>()?;
    let fam = RepFamily::new(gens, &tol).map_err(err)?;
    let g = GradedObject::new(characters).map_err(err)?;
    let v = v_iso_check(&fam, &g, &tol).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    let verdict = serde_json::to_value(v.verdict).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    d.set_item("verdict", verdict.as_str().unwrap_or_default())?;
    d.set_item("semisimple", v.semisimple)?;
    d.set_item("spectra_match", v.spectra_match)?;
    d.set_item("max_distance", v.max_distance)?;
    Ok(d)
}

#[pyfunction]
fn expm(m: PyMat) -> PyResult<PyMat> {
    Ok(from_cmat(&m_expm(&to_cmat(m)?)))
}

#[pyfunction]
fn logm(m: PyMat) -> PyResult<PyMat> {
    Ok(from_cmat(&logm_principal(&to_cmat(m)?).map_err(err)?))
}

/// Runs a JSON experiment config; returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, base_dir=None))]
fn run_config(
    py: Python<'_>,
    config_json: &str,
    out_dir: PathBuf,
    base_dir: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json_str(config_json).map_err(err)?;
    let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
    let art = py
        .detach(|| run_experiment(&cfg, &base, Some(&out_dir)))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    serde_json::to_string(&art.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn hflab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBaseGrid>()?;
    m.add_class::<PyConnection>()?;
    m.add_class::<PyFlowResult>()?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(graded, m)?)?;
    m.add_function(wrap_pyfunction!(jh_json, m)?)?;
    m.add_function(wrap_pyfunction!(iso_check, m)?)?;
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add_function(wrap_pyfunction!(logm, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
