//! Python bindings. Vectors cross the boundary as lists of floats.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sharp::experiment::{self, ExperimentConfig, Prepared};
use sharp::operators::masks::{cs_operator, kspace_rows, MaskPattern};
use sharp::priors::{self, GmmRecipe, ObservationModel};
use sharp::{DMatrix, DVector, Error, GmmPrior, LinearOperator};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::DimensionMismatch { .. } | Error::InvalidParameter(_) | Error::Config(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Divergence { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vec(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[pyclass(name = "LinearOperator", frozen)]
struct PyOperator(LinearOperator);

#[pymethods]
impl PyOperator {
    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self(LinearOperator::identity(dim))
    }

    #[staticmethod]
    fn scale(c: f64, dim: usize) -> Self {
        Self(LinearOperator::scale(c, dim))
    }

    /// Dense matrix from a list of rows.
    #[staticmethod]
    fn dense(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("rows must have equal length"));
        }
        Ok(Self(LinearOperator::dense(DMatrix::from_fn(m, n, |i, j| rows[i][j]))))
    }

    #[staticmethod]
    fn mask(dim: usize, indices: Vec<usize>) -> PyResult<Self> {
        LinearOperator::mask_indices(dim, &indices).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (height, width, real_input = true))]
    fn fourier(height: usize, width: usize, real_input: bool) -> Self {
        Self(LinearOperator::fourier(height, width, real_input))
    }

    #[staticmethod]
    fn convolution(kernel: Vec<f64>, kernel_height: usize, kernel_width: usize, height: usize, width: usize) -> PyResult<Self> {
        LinearOperator::convolution_2d(kernel, kernel_height, kernel_width, height, width)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn downsample(factor: usize, height: usize, width: usize) -> PyResult<Self> {
        LinearOperator::downsample(factor, height, width).map(Self).map_err(py_err)
    }

    /// Row-subsampled 2-D Fourier operator; `offset` selects a uniform
    /// pattern, `seed` a random one.
    #[staticmethod]
    #[pyo3(signature = (height, width, acceleration, center_lines, offset = 0, seed = None))]
    fn kspace(
        height: usize,
        width: usize,
        acceleration: usize,
        center_lines: usize,
        offset: usize,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let pattern = match seed {
            Some(seed) => MaskPattern::Random { seed },
            None => MaskPattern::Uniform { offset },
        };
        let rows = kspace_rows(height, acceleration, center_lines, pattern).map_err(py_err)?;
        cs_operator(height, width, &rows).map(Self).map_err(py_err)
    }

    fn compose(&self, then: &PyOperator) -> PyResult<Self> {
        LinearOperator::compose(vec![self.0.clone(), then.0.clone()])
            .map(Self)
            .map_err(py_err)
    }

    fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    #[getter]
    fn in_dim(&self) -> usize {
        self.0.in_dim()
    }

    #[getter]
    fn out_dim(&self) -> usize {
        self.0.out_dim()
    }

    fn apply(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.apply(&vec(v)).map(|r| list(&r)).map_err(py_err)
    }

    fn adjoint_apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.adjoint_apply(&vec(u)).map(|r| list(&r)).map_err(py_err)
    }

    fn to_dense(&self) -> PyResult<Vec<Vec<f64>>> {
        let d = self.0.to_dense().map_err(py_err)?;
        Ok(d.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("LinearOperator({} -> {})", self.0.in_dim(), self.0.out_dim())
    }
}

#[pyclass(name = "GmmPrior", frozen)]
struct PyPrior(Arc<GmmPrior>);

#[pymethods]
impl PyPrior {
    #[staticmethod]
    fn isotropic(mean: Vec<f64>, variance: f64) -> PyResult<Self> {
        GmmPrior::isotropic(vec(mean), variance)
            .map(|p| Self(Arc::new(p)))
            .map_err(py_err)
    }

    /// Builds a prior from a recipe given as a JSON object string.
    #[staticmethod]
    fn from_recipe(json: &str) -> PyResult<Self> {
        let recipe: GmmRecipe = serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        recipe.build().map(|p| Self(Arc::new(p))).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        priors::io::read(&path).map(|p| Self(Arc::new(p))).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        priors::io::write(&path, &self.0).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn components(&self) -> usize {
        self.0.components().len()
    }

    fn sample(&self, seed: u64) -> Vec<f64> {
        list(&self.0.sample(&mut sharp::rng::seeded(seed)))
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.log_density(&vec(x)).map_err(py_err)
    }
}

fn observation(h: &PyOperator, sigma: f64) -> PyResult<ObservationModel> {
    ObservationModel::new(h.0.clone(), sigma).map_err(py_err)
}

/// Posterior mean `E[x | Hx + n = s]`.
#[pyfunction]
fn mmse_restore(prior: &PyPrior, h: &PyOperator, sigma: f64, s: Vec<f64>) -> PyResult<Vec<f64>> {
    let obs = observation(h, sigma)?;
    priors::mmse_restore(&prior.0, &obs, &vec(s)).map(|r| list(&r)).map_err(py_err)
}

#[pyfunction]
fn observation_logpdf(prior: &PyPrior, h: &PyOperator, sigma: f64, s: Vec<f64>) -> PyResult<f64> {
    let obs = observation(h, sigma)?;
    priors::observation_logpdf(&prior.0, &obs, &vec(s)).map_err(py_err)
}

#[pyfunction]
fn observation_score(prior: &PyPrior, h: &PyOperator, sigma: f64, s: Vec<f64>) -> PyResult<Vec<f64>> {
    let obs = observation(h, sigma)?;
    priors::observation_score(&prior.0, &obs, &vec(s)).map(|r| list(&r)).map_err(py_err)
}

#[pyfunction]
fn psnr(x_hat: Vec<f64>, x_true: Vec<f64>, peak: f64) -> PyResult<f64> {
    sharp::metrics::psnr(&vec(x_hat), &vec(x_true), peak).map(|p| p.db).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x_hat, x_true, height, width, peak, window = 7))]
fn ssim(x_hat: Vec<f64>, x_true: Vec<f64>, height: usize, width: usize, peak: f64, window: usize) -> PyResult<f64> {
    let params = sharp::metrics::SsimParams {
        window,
        ..sharp::metrics::SsimParams::new(peak)
    };
    sharp::metrics::ssim(&vec(x_hat), &vec(x_true), height, width, &params).map_err(py_err)
}

/// Runs one seed of a JSON config in memory and returns
/// `(x_true, x_final, trace_csv, summary_row)`.
#[pyfunction]
#[pyo3(signature = (config_json, seed, base_dir = None))]
fn run_seed(
    py: Python<'_>,
    config_json: &str,
    seed: u64,
    base_dir: Option<PathBuf>,
) -> PyResult<(Vec<f64>, Vec<f64>, String, String)> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
    let out = py
        .detach(|| {
            let prepared = Prepared::new(&cfg, &base)?;
            experiment::run_seed(&cfg, &prepared, seed)
        })
        .map_err(py_err)?;
    Ok((list(&out.x_true), list(&out.x_final), out.trace.to_csv(), out.row.to_csv_line()))
}

/// Runs a config file and returns the summary CSV.
#[pyfunction]
#[pyo3(signature = (path, threads = None))]
fn run_experiment(py: Python<'_>, path: PathBuf, threads: Option<usize>) -> PyResult<String> {
    let out = py
        .detach(|| {
            let (cfg, base) = ExperimentConfig::load(&path)?;
            experiment::run_experiment(&cfg, &base, threads)
        })
        .map_err(py_err)?;
    Ok(experiment::summary_csv(&out.rows))
}

/// Oracle suite as `(name, passed, detail)` tuples.
#[pyfunction]
fn validate(py: Python<'_>) -> PyResult<Vec<(String, bool, String)>> {
    let checks = py.detach(experiment::validate).map_err(py_err)?;
    Ok(checks.into_iter().map(|c| (c.name, c.passed, c.detail)).collect())
}

#[pymodule]
fn sharp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOperator>()?;
    m.add_class::<PyPrior>()?;
    m.add_function(wrap_pyfunction!(mmse_restore, m)?)?;
    m.add_function(wrap_pyfunction!(observation_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(observation_score, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(run_seed, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
