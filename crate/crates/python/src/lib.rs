//! Python bindings: polynomials, problems, bound computation, and the
//! orbit pipeline.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lyapcert::problem::{
    bound_table, presets, verify_orbits, OrbitScanOptions, Problem as CoreProblem,
};
use lyapcert::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Parse(_) | Error::DimensionMismatch(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A sparse multivariate polynomial over named variables.
#[pyclass(name = "Polynomial")]
#[derive(Clone)]
struct PyPolynomial {
    inner: lyapcert::Polynomial,
    names: Vec<String>,
}

#[pymethods]
impl PyPolynomial {
    /// Parse from text, e.g. `Polynomial("28x1 - x2 - x1*x3", ["x1","x2","x3"])`.
    #[new]
    fn new(text: &str, variables: Vec<String>) -> PyResult<Self> {
        let inner = lyapcert::Polynomial::parse(text, &variables).map_err(to_py_err)?;
        Ok(Self { inner, names: variables })
    }

    fn eval(&self, point: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&point).map_err(to_py_err)
    }

    fn degree(&self) -> i32 {
        self.inner.degree()
    }

    fn diff(&self, var_index: usize) -> PyResult<PyPolynomial> {
        Ok(PyPolynomial {
            inner: self.inner.diff(var_index).map_err(to_py_err)?,
            names: self.names.clone(),
        })
    }

    fn __repr__(&self) -> String {
        self.inner.to_text(&self.names)
    }

    fn __str__(&self) -> String {
        self.inner.to_text(&self.names)
    }
}

/// A bound/orbit problem (preset or parsed from JSON).
#[pyclass(name = "Problem")]
struct PyProblem {
    inner: CoreProblem,
}

#[pymethods]
impl PyProblem {
    /// Load a compiled-in preset: "lorenz" or "henon-heiles".
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self { inner: presets::by_name(name).map_err(to_py_err)? })
    }

    /// Parse a problem-file JSON document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: CoreProblem::from_json(text).map_err(to_py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.field.dim()
    }

    /// Certified bounds for the given degrees. Returns one dict per degree
    /// with keys degree/bound/status/gap/residual/min_eig/certified.
    fn bound<'py>(&self, py: Python<'py>, degrees: Vec<u32>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = py.detach(|| bound_table(&self.inner, &degrees, 1));
        rows.into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("degree", r.degree)?;
                d.set_item("bound", r.bound)?;
                d.set_item("status", r.status.clone())?;
                d.set_item("gap", r.gap)?;
                d.set_item("residual", r.residual)?;
                d.set_item("min_eig", r.min_eig)?;
                d.set_item("certified", r.certified)?;
                Ok(d)
            })
            .collect()
    }

    /// Leading Lyapunov exponents of the fixed point at `x_star`.
    fn fixed_point_les(&self, x_star: Vec<f64>) -> PyResult<Vec<f64>> {
        lyapcert::dynamics::fixed_point_les(&self.inner.field, &x_star, 1e-9).map_err(to_py_err)
    }

    /// Orbit scan → shooting → leading-LE pipeline. Returns a dict with
    /// `rows`, `distinct_periods`, `max_mu1` (and `fixed_point_les` for
    /// non-Hamiltonian systems).
    #[pyo3(signature = (seed = 0, n_ics = 121, t_max = 33.0, dt = 1e-3))]
    fn verify_orbits<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        n_ics: usize,
        t_max: f64,
        dt: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = OrbitScanOptions { seed, n_ics, t_max, dt, ..OrbitScanOptions::default() };
        let report = py
            .detach(|| verify_orbits(&self.inner, &opts))
            .map_err(to_py_err)?;
        let d = PyDict::new(py);
        let rows: Vec<Bound<'py, PyDict>> = report
            .rows
            .iter()
            .map(|r| {
                let row = PyDict::new(py);
                row.set_item("x0", r.x0.clone())?;
                row.set_item("period", r.period)?;
                row.set_item("residual", r.residual)?;
                row.set_item("energy", r.energy)?;
                row.set_item("mu1", r.mu1)?;
                row.set_item("seed", r.seed)?;
                row.set_item("note", r.note.clone())?;
                Ok(row)
            })
            .collect::<PyResult<_>>()?;
        d.set_item("rows", rows)?;
        d.set_item("distinct_periods", report.distinct_periods)?;
        d.set_item("max_mu1", report.max_mu1)?;
        d.set_item("fixed_point_les", report.fixed_point_les)?;
        Ok(d)
    }
}

#[pymodule]
fn lyapcert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolynomial>()?;
    m.add_class::<PyProblem>()?;
    Ok(())
}
