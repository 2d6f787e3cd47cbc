//! Python bindings for `exitlab`. Structured results cross the boundary as
//! plain dicts and lists.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use exitlab::cli_experiments::{run_to_dir, ExperimentConfig, Subcommand};
use exitlab::environment::{Environment, EnvironmentLaw, SiteFamily};
use exitlab::exit_solver::{exit_measure, SolverOptions};
use exitlab::kernel::{Measure, SimpleRandomWalk};
use exitlab::lattice::{ball, LatticePoint};
use exitlab::multiscale_stats::{check_condition, estimate_b, PsiSpec};
use exitlab::reference_laws::{compare_bm, green_asymptotic, lclt_compare, poisson_density};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};
use serde::Serialize;

fn err(e: exitlab::Error) -> PyErr {
    match e {
        exitlab::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Any serializable value as Python objects, via `json.loads`.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn measure_dict<'py>(py: Python<'py>, m: &Measure) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (z, p) in m.entries() {
        d.set_item(PyTuple::new(py, z.coords())?, *p)?;
    }
    Ok(d)
}

fn opts(tol: f64) -> SolverOptions {
    SolverOptions {
        tol,
        ..SolverOptions::default()
    }
}

/// Law of the site transition probabilities.
#[pyclass(name = "EnvironmentLaw", frozen)]
struct PyLaw {
    inner: EnvironmentLaw,
}

#[pymethods]
impl PyLaw {
    /// `family` is "uniform-cube" or "biased" (with `drift`).
    #[new]
    #[pyo3(signature = (dim, eps, family = "uniform-cube", drift = 0.0, symmetrize = true))]
    fn new(dim: usize, eps: f64, family: &str, drift: f64, symmetrize: bool) -> PyResult<Self> {
        let family = match family {
            "uniform-cube" => SiteFamily::UniformCube,
            "biased" => SiteFamily::Biased { drift },
            other => return Err(PyValueError::new_err(format!("unknown family {other}"))),
        };
        Ok(PyLaw {
            inner: EnvironmentLaw::new(dim, eps, family, symmetrize).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    /// Environment on the lattice ball of the given radius about the origin.
    fn sample(&self, radius: f64, seed: u64) -> PyResult<PyEnvironment> {
        let v = ball(&LatticePoint::origin(self.inner.dim), radius).map_err(err)?;
        Ok(PyEnvironment {
            inner: self.inner.sample_environment(v.domain(), seed).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("EnvironmentLaw(dim={}, eps={})", self.inner.dim, self.inner.eps)
    }
}

/// A realized environment on a finite region.
#[pyclass(name = "Environment", frozen)]
struct PyEnvironment {
    inner: Environment,
}

#[pymethods]
impl PyEnvironment {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn __len__(&self) -> usize {
        self.inner.region().len()
    }

    /// Transition probabilities at a site, ordered `+e1, -e1, +e2, ...`.
    fn site(&self, x: Vec<i32>) -> PyResult<Vec<f64>> {
        Ok(self.inner.site(&LatticePoint::new(&x)).map_err(err)?.to_vec())
    }

    /// Exit law from the ball of the given radius, started at `start`
    /// (origin by default), as `{coords: probability}`.
    #[pyo3(signature = (radius, start = None, tol = 1e-12))]
    fn exit_measure<'py>(&self, py: Python<'py>, radius: f64, start: Option<Vec<i32>>, tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let dim = self.inner.law().dim;
        let v = ball(&LatticePoint::origin(dim), radius).map_err(err)?;
        let x = LatticePoint::new(&start.unwrap_or_else(|| vec![0; dim]));
        let m = py
            .detach(|| exit_measure(&self.inner, v.domain(), &x, opts(tol)))
            .map_err(err)?;
        measure_dict(py, &m.measure)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let f = File::create(path)?;
        self.inner.write_to(BufWriter::new(f)).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let f = File::open(path)?;
        Ok(PyEnvironment {
            inner: Environment::read_from(BufReader::new(f)).map_err(err)?,
        })
    }
}

/// Exit law of the simple random walk from a lattice ball.
#[pyfunction]
#[pyo3(signature = (dim, radius, start = None))]
fn srw_exit_measure<'py>(py: Python<'py>, dim: usize, radius: f64, start: Option<Vec<i32>>) -> PyResult<Bound<'py, PyDict>> {
    let v = ball(&LatticePoint::origin(dim), radius).map_err(err)?;
    let x = LatticePoint::new(&start.unwrap_or_else(|| vec![0; dim]));
    let m = py
        .detach(|| exit_measure(&SimpleRandomWalk::new(dim), v.domain(), &x, SolverOptions::default()))
        .map_err(err)?;
    measure_dict(py, &m.measure)
}

/// Bad-event frequencies and `Cond` margins over `n_env` environments.
/// `t` selects the constant field `Ψ_t`; otherwise `Ψ_L` is used.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (law, l, n_env, seed, delta = 0.1, t = None, threshold_scale = 1.0))]
fn probe(
    py: Python<'_>,
    law: &PyLaw,
    l: f64,
    n_env: usize,
    seed: u64,
    delta: f64,
    t: Option<f64>,
    threshold_scale: f64,
) -> PyResult<Py<PyAny>> {
    let psi = t.map_or(PsiSpec::psi_l(), |t| PsiSpec::Constant { t });
    let (p, c) = py
        .detach(|| {
            let p = estimate_b(&law.inner, l, &psi, delta, n_env, seed, threshold_scale, SolverOptions::default())?;
            let c = check_condition(&p, delta, l)?;
            Ok((p, c))
        })
        .map_err(err)?;
    let out = to_py(py, &p)?;
    out.bind(py).set_item("condition", to_py(py, &c)?)?;
    Ok(out)
}

#[pyfunction]
fn lclt(py: Python<'_>, dim: usize, m: f64, ns: Vec<usize>) -> PyResult<Py<PyAny>> {
    let r = py.detach(|| lclt_compare(dim, m, &ns)).map_err(err)?;
    to_py(py, &r)
}

/// Green function of the coarse-grained walk at scale `m` (d = 3).
#[pyfunction]
fn green(py: Python<'_>, m: f64, points: Vec<Vec<i32>>) -> PyResult<Py<PyAny>> {
    let pts: Vec<LatticePoint> = points.iter().map(|p| LatticePoint::new(p)).collect();
    let r = py.detach(|| green_asymptotic(m, &pts)).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn brownian_comparison(py: Python<'_>, dim: usize, l: f64, m: f64) -> PyResult<Py<PyAny>> {
    let r = py.detach(|| compare_bm(dim, l, m)).map_err(err)?;
    to_py(py, &r)
}

/// Poisson kernel of the Euclidean ball of radius `l`.
#[pyfunction]
fn poisson_kernel(l: f64, y: Vec<f64>, z: Vec<f64>) -> PyResult<f64> {
    poisson_density(l, &y, &z).map_err(err)
}

/// Runs a CLI subcommand with a JSON config; returns the manifest and the
/// list of failed checks.
#[pyfunction]
#[pyo3(signature = (subcommand, config_json, out_dir, threads = 1))]
fn run_experiment(py: Python<'_>, subcommand: &str, config_json: &str, out_dir: PathBuf, threads: usize) -> PyResult<Py<PyAny>> {
    let sub = Subcommand::parse(subcommand).ok_or_else(|| PyValueError::new_err(format!("unknown subcommand {subcommand}")))?;
    let cfg = ExperimentConfig::from_json(config_json).map_err(err)?;
    let (manifest, failures) = py.detach(|| run_to_dir(sub, &cfg, &out_dir, threads)).map_err(err)?;
    let out = to_py(py, &manifest)?;
    out.bind(py).set_item("failures", failures)?;
    Ok(out)
}

#[pymodule]
fn exitlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", exitlab::cli_experiments::VERSION)?;
    m.add_class::<PyLaw>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_function(wrap_pyfunction!(srw_exit_measure, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(lclt, m)?)?;
    m.add_function(wrap_pyfunction!(green, m)?)?;
    m.add_function(wrap_pyfunction!(brownian_comparison, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
