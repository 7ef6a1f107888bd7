use faer::Mat;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use koopman_mp::decomp;
use koopman_mp::dictionary::{self, GramPair};
use koopman_mp::experiments::{self, ExperimentConfig};
use koopman_mp::forecast;
use koopman_mp::numkit::{CMatrix, C64};
use koopman_mp::sampling::{self, LorenzParams};
use koopman_mp::spectral::{self, SpectralMeasure, TestFunction};
use koopman_mp::Error;

create_exception!(koopman_mp_py, NumericalError, PyException, "Numerical failure (ill-conditioned Gram matrix, non-finite values, ...).");

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

type Rows = Vec<Vec<C64>>;

fn to_mat(rows: &Rows, what: &str) -> PyResult<CMatrix> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_real_mat(rows: &[Vec<f64>], what: &str) -> PyResult<Mat<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &CMatrix) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Gram matrices `G = Psi_X* W Psi_X` and `A = Psi_X* W Psi_Y`.
#[pyclass(name = "GramPair", module = "koopman_mp_py", from_py_object)]
#[derive(Clone)]
struct PyGramPair {
    inner: GramPair,
}

#[pymethods]
impl PyGramPair {
    #[new]
    fn new(g: Rows, a: Rows) -> PyResult<Self> {
        let inner = GramPair::new(to_mat(&g, "G")?, to_mat(&a, "A")?).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// From dictionary evaluations (`M x N`) and quadrature weights.
    #[staticmethod]
    fn from_data(psi_x: Rows, psi_y: Rows, weights: Vec<f64>) -> PyResult<Self> {
        let inner = dictionary::gram(&to_mat(&psi_x, "psi_x")?, &to_mat(&psi_y, "psi_y")?, &weights).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Delay-embedding Gram pair from a scalar series `z` (needs `m + n` samples).
    #[staticmethod]
    fn from_delays(z: Vec<C64>, n: usize, m: usize) -> PyResult<Self> {
        Ok(Self {
            inner: dictionary::delay_gram(&z, n, m).map_err(py_err)?,
        })
    }

    #[getter]
    fn g(&self) -> Rows {
        to_rows(&self.inner.g)
    }

    #[getter]
    fn a(&self) -> Rows {
        to_rows(&self.inner.a)
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }

    fn __repr__(&self) -> String {
        format!("GramPair(N={})", self.inner.size())
    }
}

/// A fitted Koopman matrix with its eigendecomposition.
#[pyclass(name = "KoopmanModel", module = "koopman_mp_py", skip_from_py_object)]
struct PyModel {
    inner: decomp::KoopmanModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn k(&self) -> Rows {
        to_rows(&self.inner.k)
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<C64> {
        self.inner.eigvals.clone()
    }

    /// Eigenvectors as columns.
    #[getter]
    fn eigenvectors(&self) -> Rows {
        to_rows(&self.inner.eigvecs)
    }

    #[getter]
    fn reliable(&self) -> bool {
        self.inner.reliable
    }

    #[getter]
    fn eigvec_cond(&self) -> f64 {
        self.inner.eigvec_cond
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }

    fn __repr__(&self) -> String {
        format!("KoopmanModel(method={}, N={})", self.inner.method, self.inner.size())
    }

    /// Atoms `(phase, mass)` of the spectral measure of `ghat`.
    fn measure(&self, ghat: Vec<C64>) -> PyResult<Vec<(f64, f64)>> {
        Ok(spectral::scalar_measure(&self.inner, &ghat).map_err(py_err)?.atoms().to_vec())
    }

    /// `int lambda^l d mu_g` for the normalized observable.
    fn moment(&self, ghat: Vec<C64>, l: i32) -> PyResult<C64> {
        spectral::moment(&self.inner, &ghat, l).map_err(py_err)
    }

    /// Coefficients of `phi(K) g` for `phi(lambda) = lambda^power`, or
    /// `exp(sin(arg lambda))` when `power` is omitted.
    #[pyo3(signature = (ghat, power=None))]
    fn apply(&self, ghat: Vec<C64>, power: Option<i32>) -> PyResult<Vec<C64>> {
        let phi = power.map_or(TestFunction::ExpSin, TestFunction::Power);
        spectral::apply_test_function(&self.inner, &phi, &ghat).map_err(py_err)
    }

    /// Residual of every eigenpair against `gram`.
    fn residuals(&self, gram: &PyGramPair) -> PyResult<Vec<f64>> {
        spectral::residuals(&self.inner, &gram.inner).map_err(py_err)
    }

    /// `a_n* G a_n` with `a_n = K^n a_0`.
    fn energy(&self, a0: Vec<C64>, n: u64) -> PyResult<f64> {
        forecast::coeff_energy(&self.inner, &a0, n).map_err(py_err)
    }

    /// Koopman mode forecast `g(x_n)` for `n = 0..=steps`, given the
    /// dictionary row `Psi(x_0)` and coefficients of `g`.
    fn predict(&self, psi_x0: Vec<C64>, ghat: Vec<C64>, steps: u64) -> PyResult<Vec<C64>> {
        let kmd = forecast::kmd_from_coefficients(&self.inner, &Mat::from_fn(ghat.len(), 1, |i, _| ghat[i]))
            .map_err(py_err)?;
        let row = forecast::eigenfunction_row(&self.inner, &psi_x0).map_err(py_err)?;
        Ok((0..=steps).map(|n| forecast::predict(&kmd, &row, n)[0]).collect())
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: decomp::KoopmanModel::from_json(text).map_err(py_err)?,
        })
    }
}

#[pyfunction]
fn mpedmd(gram: &PyGramPair) -> PyResult<PyModel> {
    Ok(PyModel {
        inner: decomp::mpedmd(&gram.inner).map_err(py_err)?,
    })
}

#[pyfunction]
fn edmd(gram: &PyGramPair) -> PyResult<PyModel> {
    Ok(PyModel {
        inner: decomp::edmd(&gram.inner).map_err(py_err)?,
    })
}

/// DMD on raw states (`M x d` snapshot rows).
#[pyfunction]
fn dmd(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<PyModel> {
    Ok(PyModel {
        inner: decomp::dmd(&to_real_mat(&x, "x")?, &to_real_mat(&y, "y")?, &weights).map_err(py_err)?,
    })
}

/// Unitary piDMD on raw states.
#[pyfunction]
fn pidmd(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<PyModel> {
    Ok(PyModel {
        inner: decomp::pidmd_unitary(&to_real_mat(&x, "x")?, &to_real_mat(&y, "y")?, &weights).map_err(py_err)?,
    })
}

/// Unitary `C` minimizing `||P C - Q||_F`, with the singular values of `Q* P`.
#[pyfunction]
fn procrustes(p: Rows, q: Rows) -> PyResult<(Rows, Vec<f64>)> {
    let s = decomp::procrustes(&to_mat(&p, "P")?, &to_mat(&q, "Q")?).map_err(py_err)?;
    Ok((to_rows(&s.c), s.sigma))
}

/// Wasserstein-1 distance between two measures given as `(phase, mass)` atoms.
#[pyfunction]
fn w1(mu: Vec<(f64, f64)>, nu: Vec<(f64, f64)>) -> PyResult<f64> {
    let a = SpectralMeasure::new(mu).map_err(py_err)?;
    let b = SpectralMeasure::new(nu).map_err(py_err)?;
    Ok(spectral::w1(&a, &b))
}

/// `m + 1` Lorenz states sampled every `dt`, as rows.
#[pyfunction]
#[pyo3(signature = (x0, dt, m, substeps=None))]
fn lorenz_trajectory(x0: [f64; 3], dt: f64, m: usize, substeps: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    let sub = substeps.unwrap_or_else(|| sampling::default_substeps(dt));
    let t = sampling::lorenz_trajectory(x0, dt, m, LorenzParams::default(), sub).map_err(py_err)?;
    Ok((0..t.len()).map(|i| t.state(i)).collect())
}

/// Runs a catalog experiment; returns the summary as a JSON string and
/// writes artifacts when `out` is given.
#[pyfunction]
#[pyo3(signature = (name, params=None, seed=0, out=None))]
fn run_experiment(name: &str, params: Option<&str>, seed: u64, out: Option<&str>) -> PyResult<String> {
    let mut cfg = ExperimentConfig::new(name.parse().map_err(py_err)?);
    if let Some(p) = params {
        cfg = cfg.with_params(serde_json::from_str(p).map_err(|e| PyValueError::new_err(e.to_string()))?);
    }
    cfg.seed = seed;
    let outcome = experiments::run(&cfg).map_err(py_err)?;
    if let Some(dir) = out {
        experiments::write_outcome(&outcome, dir).map_err(py_err)?;
    }
    serde_json::to_string(&outcome.summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn koopman_mp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGramPair>()?;
    m.add_class::<PyModel>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(mpedmd, m)?)?;
    m.add_function(wrap_pyfunction!(edmd, m)?)?;
    m.add_function(wrap_pyfunction!(dmd, m)?)?;
    m.add_function(wrap_pyfunction!(pidmd, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes, m)?)?;
    m.add_function(wrap_pyfunction!(w1, m)?)?;
    m.add_function(wrap_pyfunction!(lorenz_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
