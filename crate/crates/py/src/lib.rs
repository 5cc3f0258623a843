use esn_discrim::em::{fit as em_fit, matrix_from_rows, FitOptions, Theta, TrainingData};
use esn_discrim::numkit::{self, rng_stream, TruncatedConditional};
use esn_discrim::sim::{report_json, run_study, RunOptions};
use esn_discrim::{
    classify as cls, Classifier as CoreClassifier, EsnParams as CoreEsn, GroupPair as CorePair,
};
use esn_discrim::{Error, Priors, RuleKind, SimConfig};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(esn_discrim, EsnError, PyException);

fn py_err(e: Error) -> PyErr {
    EsnError::new_err(e.to_string())
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn square(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(&rows).map_err(py_err)
}

fn data_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(EsnError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn slice_of(v: &DVector<f64>) -> Vec<f64> {
    v.as_slice().to_vec()
}

fn rule_kind(name: &str) -> PyResult<RuleKind> {
    name.parse().map_err(py_err)
}

/// Extended skew-normal law with location `xi`, dispersion `omega`, shape
/// `eta` and extension `tau`.
#[pyclass(name = "EsnParams", module = "esn_discrim", skip_from_py_object)]
#[derive(Clone)]
struct PyEsn(CoreEsn);

#[pymethods]
impl PyEsn {
    #[new]
    fn new(xi: Vec<f64>, omega: Vec<Vec<f64>>, eta: Vec<f64>, tau: f64) -> PyResult<Self> {
        CoreEsn::from_centered(vector(xi), square(omega)?, vector(eta), tau)
            .map(Self)
            .map_err(py_err)
    }

    /// Builds the law from the latent-regression form `(xi, sigma, delta, tau)`.
    #[staticmethod]
    fn from_delta(xi: Vec<f64>, sigma: Vec<Vec<f64>>, delta: Vec<f64>, tau: f64) -> PyResult<Self> {
        CoreEsn::from_delta(vector(xi), square(sigma)?, vector(delta), tau)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }
    #[getter]
    fn xi(&self) -> Vec<f64> {
        slice_of(self.0.xi())
    }
    #[getter]
    fn omega(&self) -> Vec<Vec<f64>> {
        rows_of(self.0.omega())
    }
    #[getter]
    fn eta(&self) -> Vec<f64> {
        slice_of(self.0.eta())
    }
    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau()
    }
    #[getter]
    fn delta(&self) -> Vec<f64> {
        slice_of(self.0.delta())
    }
    #[getter]
    fn sigma(&self) -> Vec<Vec<f64>> {
        rows_of(self.0.sigma())
    }
    #[getter]
    fn tau_bar(&self) -> f64 {
        self.0.tau_bar()
    }

    fn pdf(&self, y: Vec<f64>) -> PyResult<f64> {
        self.0.pdf(&vector(y)).map_err(py_err)
    }

    fn log_pdf(&self, y: Vec<f64>) -> PyResult<f64> {
        self.0.log_pdf(&vector(y)).map_err(py_err)
    }

    /// CDF of a one-dimensional law.
    fn cdf1(&self, y: f64) -> PyResult<f64> {
        self.0.cdf1(y).map_err(py_err)
    }

    /// `(mean, covariance)`.
    fn mean_var(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (m, v) = self.0.mean_var();
        (slice_of(&m), rows_of(&v))
    }

    /// `n` draws as a list of rows from stream `stream` of `seed`.
    #[pyo3(signature = (n, seed, stream = 0))]
    fn sample(&self, n: usize, seed: u64, stream: u64) -> Vec<Vec<f64>> {
        rows_of(&self.0.sample(&mut rng_stream(seed, stream), n))
    }

    /// One-dimensional law of `a·Y + b`.
    #[pyo3(signature = (a, b = 0.0))]
    fn affine(&self, a: Vec<f64>, b: f64) -> PyResult<Self> {
        self.0
            .affine(&vector(a), b)
            .map(|(_, law)| Self(law))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "EsnParams(xi={:?}, eta={:?}, tau={})",
            self.0.xi().as_slice(),
            self.0.eta().as_slice(),
            self.0.tau()
        )
    }
}

/// Two groups with prior probabilities.
#[pyclass(name = "GroupPair", module = "esn_discrim", skip_from_py_object)]
#[derive(Clone)]
struct PyPair(CorePair);

#[pymethods]
impl PyPair {
    #[new]
    #[pyo3(signature = (g1, g2, p1 = 0.5, p2 = 0.5))]
    fn new(g1: &PyEsn, g2: &PyEsn, p1: f64, p2: f64) -> PyResult<Self> {
        let priors = Priors::new(p1, p2).map_err(py_err)?;
        CorePair::new(g1.0.clone(), g2.0.clone(), priors)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn g1(&self) -> PyEsn {
        PyEsn(self.0.g1().clone())
    }
    #[getter]
    fn g2(&self) -> PyEsn {
        PyEsn(self.0.g2().clone())
    }

    /// `(P(group 1 | y), P(group 2 | y))`.
    fn posterior(&self, y: Vec<f64>) -> PyResult<(f64, f64)> {
        self.0.posterior(&vector(y)).map_err(py_err)
    }

    /// Log density ratio of group 1 to group 2.
    fn psi_esn(&self, y: Vec<f64>) -> PyResult<f64> {
        cls::psi_esn(&self.0, &vector(y)).map_err(py_err)
    }

    fn psi_cn_exact(&self, y: Vec<f64>) -> PyResult<f64> {
        cls::psi_cn_exact(&self.0, &vector(y)).map_err(py_err)
    }

    /// Coefficients `(a, b)` of the linear approximation `esn_linear` or `cn_linear`.
    fn linear_coefficients(&self, rule: &str) -> PyResult<(Vec<f64>, f64)> {
        let r = match rule_kind(rule)? {
            RuleKind::EsnLinear => cls::psi_esn_linear(&self.0),
            RuleKind::CnLinear => cls::psi_cn_linear(&self.0),
            other => {
                return Err(EsnError::new_err(format!(
                    "{other} has no linear approximation"
                )))
            }
        }
        .map_err(py_err)?;
        Ok((slice_of(&r.a), r.b))
    }

    /// Total probability of misclassification of a linear rule at threshold `gamma`.
    fn tpm(&self, rule: &str, gamma: f64) -> PyResult<f64> {
        let r = match rule_kind(rule)? {
            RuleKind::EsnLinear => cls::psi_esn_linear(&self.0),
            RuleKind::CnLinear => cls::psi_cn_linear(&self.0),
            other => {
                return Err(EsnError::new_err(format!(
                    "{other} has no linear approximation"
                )))
            }
        }
        .map_err(py_err)?;
        cls::tpm(&r, &self.0, gamma).map_err(py_err)
    }
}

/// Discriminant rule built from a [`GroupPair`].
#[pyclass(name = "Classifier", module = "esn_discrim")]
struct PyClassifier(CoreClassifier);

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (pair, rule = "esn_linear"))]
    fn new(pair: &PyPair, rule: &str) -> PyResult<Self> {
        CoreClassifier::build(&pair.0, rule_kind(rule)?)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn rule(&self) -> &'static str {
        self.0.kind().name()
    }

    /// Threshold of a linear rule; `None` for exact rules.
    #[getter]
    fn gamma(&self) -> Option<f64> {
        match &self.0 {
            CoreClassifier::Linear { rule, .. } => rule.gamma,
            CoreClassifier::Exact { .. } => None,
        }
    }

    /// Label 1 or 2.
    fn classify(&self, y: Vec<f64>) -> PyResult<u8> {
        self.0
            .classify(&vector(y))
            .map(|g| g.as_u8())
            .map_err(py_err)
    }

    fn classify_many(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<u32>> {
        rows.into_iter()
            .map(|y| self.classify(y).map(u32::from))
            .collect()
    }
}

/// Fitted two-group model.
#[pyclass(name = "FitResult", module = "esn_discrim", get_all)]
struct PyFit {
    xi1: Vec<f64>,
    xi2: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    delta: Vec<f64>,
    tau: f64,
    loglik: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

impl PyFit {
    fn theta(&self) -> Theta {
        Theta {
            xi1: vector(self.xi1.clone()),
            xi2: vector(self.xi2.clone()),
            sigma: DMatrix::from_fn(self.sigma.len(), self.sigma.len(), |i, j| self.sigma[i][j]),
            delta: vector(self.delta.clone()),
            tau: self.tau,
        }
    }
}

#[pymethods]
impl PyFit {
    #[pyo3(signature = (p1 = 0.5, p2 = 0.5))]
    fn group_pair(&self, p1: f64, p2: f64) -> PyResult<PyPair> {
        let priors = Priors::new(p1, p2).map_err(py_err)?;
        self.theta().group_pair(priors).map(PyPair).map_err(py_err)
    }
}

/// EM fit of two groups given as lists of rows.
#[pyfunction]
#[pyo3(signature = (y1, y2, tau, max_iter = 500, tol = 1e-8))]
fn fit(
    y1: Vec<Vec<f64>>,
    y2: Vec<Vec<f64>>,
    tau: f64,
    max_iter: usize,
    tol: f64,
) -> PyResult<PyFit> {
    let data = TrainingData::new(data_matrix(&y1)?, data_matrix(&y2)?).map_err(py_err)?;
    let res = em_fit(&data, tau, FitOptions { max_iter, tol }).map_err(py_err)?;
    let t = &res.theta;
    Ok(PyFit {
        xi1: slice_of(&t.xi1),
        xi2: slice_of(&t.xi2),
        sigma: rows_of(&t.sigma),
        delta: slice_of(&t.delta),
        tau: t.tau,
        loglik: res.loglik(),
        iterations: res.iterations,
        converged: res.converged,
        trace: res.trace,
    })
}

/// Runs a Monte Carlo study from a JSON config and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (config_json, seed, replications = None, train_n = None, rule = None, workers = None))]
fn simulate(
    py: Python<'_>,
    config_json: &str,
    seed: u64,
    replications: Option<usize>,
    train_n: Option<usize>,
    rule: Option<&str>,
    workers: Option<usize>,
) -> PyResult<String> {
    let mut cfg = SimConfig::from_json(config_json).map_err(py_err)?;
    cfg.seed = seed;
    if let Some(b) = replications {
        cfg.replications = b;
    }
    if let Some(n) = train_n {
        cfg.train_n = n;
    }
    if let Some(r) = rule {
        cfg.rule_kind = rule_kind(r)?;
    }
    cfg.validate().map_err(py_err)?;
    let report = py
        .detach(|| {
            run_study(
                &cfg,
                RunOptions {
                    workers,
                    timing: false,
                },
            )
        })
        .map_err(py_err)?;
    report_json(&report).map_err(py_err)
}

#[pyfunction]
fn zeta1(x: f64) -> PyResult<f64> {
    numkit::zeta1(x).map_err(py_err)
}

#[pyfunction]
fn zeta2(x: f64) -> PyResult<f64> {
    numkit::zeta2(x).map_err(py_err)
}

#[pyfunction]
fn bvn_cdf(h: f64, k: f64, rho: f64) -> PyResult<f64> {
    numkit::bvn_cdf(h, k, rho).map_err(py_err)
}

/// `(E[U], E[U²])` for `U ~ N(alpha, beta²)` truncated to `U > −tau`.
#[pyfunction]
fn trunc_norm_moments(alpha: f64, beta: f64, tau: f64) -> PyResult<(f64, f64)> {
    TruncatedConditional::new(alpha, beta, tau)
        .map(|c| numkit::trunc_norm_moments(&c))
        .map_err(py_err)
}

#[pymodule]
#[pyo3(name = "esn_discrim")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EsnError", m.py().get_type::<EsnError>())?;
    m.add(
        "RULES",
        RuleKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
    )?;
    m.add_class::<PyEsn>()?;
    m.add_class::<PyPair>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(zeta1, m)?)?;
    m.add_function(wrap_pyfunction!(zeta2, m)?)?;
    m.add_function(wrap_pyfunction!(bvn_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(trunc_norm_moments, m)?)?;
    Ok(())
}
