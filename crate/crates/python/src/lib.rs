use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sasaki_lab::estimates::{apriori_report, EstimateOptions};
use sasaki_lab::functionals::{functional_i, functional_j, functional_m, linear_l, FunctionalPath};
use sasaki_lab::ma_solver::{continuity_solve, residual, ContinuityFamily, Equation, SolverOptions};
use sasaki_lab::spectral::{basic_spectrum, hamiltonian_detector};
use sasaki_lab::{
    build_model, metric_state, BasicFunction, Error, MetricState, ModelConfig, SymmetryMode, TransverseModel,
};
use std::sync::Arc;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::BackgroundNotPositive { .. }
        | Error::OddPerturbation { .. }
        | Error::NotPositive { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<SymmetryMode> {
    match mode {
        "full" => Ok(SymmetryMode::Full),
        "even" => Ok(SymmetryMode::Even),
        other => Err(PyValueError::new_err(format!("unknown symmetry mode {other:?}"))),
    }
}

fn parse_eqn(eqn: &str) -> PyResult<Equation> {
    eqn.parse().map_err(|_| PyValueError::new_err(format!("unknown equation {eqn:?}")))
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Transverse model of the Hopf fibration with an optional background potential.
#[pyclass(frozen, name = "Model")]
struct PyModel {
    inner: Arc<TransverseModel>,
}

impl PyModel {
    fn function(&self, coeffs: Vec<f64>) -> PyResult<BasicFunction> {
        self.inner.function_from_coeffs(coeffs).map_err(to_py)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (band_limit, symmetry_mode = "full", perturbation = Vec::new()))]
    fn new(band_limit: usize, symmetry_mode: &str, perturbation: Vec<(usize, i64, f64)>) -> PyResult<Self> {
        let mut config = ModelConfig::canonical(band_limit, parse_mode(symmetry_mode)?);
        config.perturbation = perturbation;
        Ok(Self { inner: build_model(config).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let config = ModelConfig::from_toml_str(text).map_err(to_py)?;
        Ok(Self { inner: build_model(config).map_err(to_py)? })
    }

    #[getter]
    fn band_limit(&self) -> usize {
        self.inner.band_limit()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.grid().n_modes()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    /// Node values of the normalized Ricci potential of the background.
    fn ricci_potential(&self) -> Vec<f64> {
        self.inner.ricci_potential().values().to_vec()
    }

    /// Coefficient vector of `amplitude * Y_{degree,order}`.
    fn harmonic(&self, degree: usize, order: i64, amplitude: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.harmonic(degree, order, amplitude).map_err(to_py)?.coeffs().to_vec())
    }

    /// Metric state of the potential with the given coefficients (zero if omitted).
    #[pyo3(signature = (coeffs = None))]
    fn state(&self, coeffs: Option<Vec<f64>>) -> PyResult<PyState> {
        let u = match coeffs {
            Some(c) => self.function(c)?,
            None => self.inner.zero(),
        };
        Ok(PyState { inner: metric_state(&self.inner, u).map_err(to_py)? })
    }

    fn functional_l(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        Ok(linear_l(&self.inner, &self.function(a)?, &self.function(b)?))
    }

    fn functional_m(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        let path = FunctionalPath::linear(&self.function(a)?, &self.function(b)?);
        functional_m(&self.inner, &path).map_err(to_py)
    }

    fn functional_i(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        functional_i(&self.inner, &self.function(a)?, &self.function(b)?).map_err(to_py)
    }

    fn functional_j(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        let path = FunctionalPath::linear(&self.function(a)?, &self.function(b)?);
        functional_j(&self.inner, &path).map_err(to_py)
    }

    /// Number of Hamiltonian holomorphic fields found by the detector.
    fn hamiltonian_field_count(&self) -> PyResult<usize> {
        Ok(hamiltonian_detector(&self.inner).map_err(to_py)?.len())
    }
}

#[pyclass(frozen, name = "State")]
struct PyState {
    inner: MetricState,
}

#[pymethods]
impl PyState {
    #[getter]
    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    #[getter]
    fn min_ratio(&self) -> f64 {
        self.inner.min_ratio()
    }

    #[getter]
    fn potential(&self) -> Vec<f64> {
        self.inner.potential().coeffs().to_vec()
    }

    fn density(&self) -> Vec<f64> {
        self.inner.density().to_vec()
    }

    fn scalar_curvature(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.scalar_curvature_values().map_err(to_py)?.to_vec())
    }

    /// Max-norm residual of the continuity equation at `t`.
    #[pyo3(signature = (t, eqn = "s2"))]
    fn residual(&self, t: f64, eqn: &str) -> PyResult<f64> {
        Ok(residual(&self.inner, t, parse_eqn(eqn)?).map_err(to_py)?.max_abs())
    }

    /// Lowest `count` eigenvalues of the weighted basic Laplacian.
    fn spectrum(&self, count: usize) -> PyResult<Vec<f64>> {
        Ok(basic_spectrum(&self.inner, count).map_err(to_py)?.eigenvalues)
    }
}

#[pyclass(frozen, name = "Family")]
struct PyFamily {
    inner: ContinuityFamily,
}

#[pymethods]
impl PyFamily {
    #[getter]
    fn t_values(&self) -> Vec<f64> {
        self.inner.t_values()
    }

    #[getter]
    fn reached_target(&self) -> bool {
        self.inner.reached_target
    }

    fn potentials(&self) -> Vec<Vec<f64>> {
        self.inner.nodes.iter().map(|n| n.coeffs.clone()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }

    /// A priori estimate report as JSON (no diameter run).
    fn estimates(&self) -> PyResult<String> {
        json(&apriori_report(&self.inner, &EstimateOptions::default()).map_err(to_py)?)
    }
}

/// Runs the continuity method with output nodes every `dt`.
#[pyfunction]
#[pyo3(signature = (model, eqn = "s2", dt = 0.1, seed = None))]
fn solve(model: &PyModel, eqn: &str, dt: f64, seed: Option<u64>) -> PyResult<PyFamily> {
    let mut opts = SolverOptions::default().with_step(dt);
    opts.seed = seed;
    let family = continuity_solve(&model.inner, parse_eqn(eqn)?, &opts).map_err(to_py)?;
    Ok(PyFamily { inner: family })
}

#[pymodule]
pub fn pysasaki(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyFamily>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    Ok(())
}
