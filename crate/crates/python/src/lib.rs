//! Python bindings for the collapse-lab solvers, oracles and metrics.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows. Invalid input raises `ValueError`, an exhausted iteration budget
//! raises `NonConvergedError` and numeric breakdowns raise `ArithmeticError`.

use collapse_lab::cli::config::parse_config;
use collapse_lab::cli::experiments::run_experiment;
use collapse_lab::cli::verify::run_suite;
use collapse_lab::counterexamples::{
    self as cx, integrate_three_neuron_with, margin_report, train_mean_field_relu, MarginDataset, StepSchedule,
    ThreeNeuronState,
};
use collapse_lab::final_layer::{self, SolverSettings};
use collapse_lab::loss::{self, LabeledPointSet, LogitVector};
use collapse_lab::metrics;
use collapse_lab::penultimate::{self, check_isometry, PenultimateSettings};
use collapse_lab::{simplex, LabError};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(collapse_lab_py, NonConvergedError, PyRuntimeError);

fn py_err(e: LabError) -> PyErr {
    match e {
        LabError::InvalidArgument(_) | LabError::UnsupportedNorm(_) => PyValueError::new_err(e.to_string()),
        LabError::NonConverged { .. } => NonConvergedError::new_err(e.to_string()),
        LabError::NumericFailure(_) => PyArithmeticError::new_err(e.to_string()),
    }
}

fn logits(z: &[f64]) -> PyResult<LogitVector> {
    LogitVector::from_slice(z).map_err(py_err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn dense(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what} must be a non-empty rectangular list of rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn class_weights(k: usize, weights: Option<Vec<f64>>) -> PyResult<LabeledPointSet> {
    let w = weights.unwrap_or_else(|| vec![1.0 / k as f64; k]);
    if w.len() != k {
        return Err(PyValueError::new_err(format!("{} weights for k = {k} classes", w.len())));
    }
    LabeledPointSet::one_point_per_class(&w).map_err(py_err)
}

/// Softmax probabilities of a logit vector.
#[pyfunction]
fn softmax(z: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(loss::softmax(&logits(&z)?).as_slice().to_vec())
}

/// Cross-entropy `log Σ exp(z) − z_j`.
#[pyfunction]
fn phi(j: usize, z: Vec<f64>) -> PyResult<f64> {
    loss::phi(j, &logits(&z)?).map_err(py_err)
}

/// Gradient of the cross-entropy with respect to the logits.
#[pyfunction]
fn grad_phi(j: usize, z: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(loss::grad_phi(j, &logits(&z)?).map_err(py_err)?.as_slice().to_vec())
}

/// Hessian of the cross-entropy, as a list of rows.
#[pyfunction]
fn hess_phi(z: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&loss::hess_phi(&logits(&z)?)))
}

/// `‖z‖_p`.
#[pyfunction]
fn lp_norm(z: Vec<f64>, p: f64) -> PyResult<f64> {
    simplex::check_norm_exponent(p).map_err(py_err)?;
    Ok(simplex::lp_norm(&z, p))
}

/// Euclidean projection onto the ℓᵖ ball of the given radius.
#[pyfunction]
fn project_lp_ball(z: Vec<f64>, radius: f64, p: f64) -> PyResult<Vec<f64>> {
    Ok(final_layer::project_lp_ball(&logits(&z)?, radius, p).map_err(py_err)?.as_slice().to_vec())
}

/// Closed-form optimal logit configuration on the ℓᵖ sphere.
#[pyclass(frozen, get_all)]
struct Simplex {
    k: usize,
    radius: f64,
    p: f64,
    /// Coordinate of a vertex at its own class.
    alpha: f64,
    /// Every other coordinate.
    beta: f64,
}

#[pymethods]
impl Simplex {
    #[new]
    #[pyo3(signature = (k, radius = 1.0, p = 2.0))]
    fn new(k: usize, radius: f64, p: f64) -> PyResult<Self> {
        let s = simplex::simplex_lp(k, radius, p).map_err(py_err)?;
        Ok(Self { k, radius, p, alpha: s.alpha(), beta: s.beta() })
    }

    /// Vertex of class `j`.
    fn vertex(&self, j: usize) -> PyResult<Vec<f64>> {
        let s = simplex::simplex_lp(self.k, self.radius, self.p).map_err(py_err)?;
        Ok(s.vertex(j).map_err(py_err)?.as_slice().to_vec())
    }

    /// All vertices, one list per class.
    fn vertices(&self) -> PyResult<Vec<Vec<f64>>> {
        (0..self.k).map(|j| self.vertex(j)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Simplex(k={}, radius={}, p={}, alpha={}, beta={})", self.k, self.radius, self.p, self.alpha, self.beta)
    }
}

/// Numerical minimizer of the final-layer risk with one point per class.
#[pyclass(frozen, get_all)]
struct FinalLayerSolution {
    vertices: Vec<Vec<f64>>,
    risk: f64,
}

#[pyfunction]
#[pyo3(signature = (k, radius = 1.0, p = 2.0, weights = None, tol = 1e-12, max_iter = 20_000))]
fn solve_final_layer(
    k: usize,
    radius: f64,
    p: f64,
    weights: Option<Vec<f64>>,
    tol: f64,
    max_iter: usize,
) -> PyResult<FinalLayerSolution> {
    let data = class_weights(k, weights)?;
    let settings = SolverSettings { radius, p, tol, max_iter, ..Default::default() };
    let sol = final_layer::solve_final_layer(&data, &settings).map_err(py_err)?;
    Ok(FinalLayerSolution { vertices: sol.vertices.iter().map(|v| v.as_slice().to_vec()).collect(), risk: sol.risk })
}

/// Result of jointly training features and a spectrally constrained map.
#[pyclass(frozen, get_all)]
struct PenultimateRun {
    /// Features, one row per class.
    features: Vec<Vec<f64>>,
    /// The `k × m` map.
    map: Vec<Vec<f64>>,
    risk: f64,
    oracle_risk: f64,
    iterations: usize,
    residual: f64,
    center_norm: f64,
    isometry_deviation: f64,
}

#[pyfunction]
#[pyo3(signature = (k, m, radius = 1.0, weights = None, seed = 0, tol = 1e-8, max_iter = 100_000))]
fn optimize_penultimate(
    k: usize,
    m: usize,
    radius: f64,
    weights: Option<Vec<f64>>,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> PyResult<PenultimateRun> {
    let data = class_weights(k, weights)?;
    let settings = PenultimateSettings { seed, tol, max_iter, ..Default::default() };
    let run = penultimate::optimize_penultimate(&data, m, radius, &settings).map_err(py_err)?;
    let iso = check_isometry(&run.state);
    Ok(PenultimateRun {
        features: rows(&run.state.features().transpose()),
        map: rows(run.state.map()),
        risk: run.risk,
        oracle_risk: run.oracle_risk,
        iterations: run.iterations,
        residual: run.residual,
        center_norm: iso.center_norm,
        isometry_deviation: iso.gram_deviation,
    })
}

/// Trajectory of the three-neuron gradient flow as `(t, a1, a2, a3)` rows.
#[pyfunction]
#[pyo3(signature = (p, a0 = [0.0, 0.0, 0.0], t_end = 1e6, dt = 1e-2, growth = 1e-2))]
fn integrate_three_neuron(p: [f64; 3], a0: [f64; 3], t_end: f64, dt: f64, growth: f64) -> PyResult<Vec<[f64; 4]>> {
    let s0 = ThreeNeuronState::new(a0, p).map_err(py_err)?;
    let traj = integrate_three_neuron_with(&s0, t_end, &StepSchedule::geometric(dt, growth)).map_err(py_err)?;
    Ok(traj.iter().map(|s| [s.t, s.a[0], s.a[1], s.a[2]]).collect())
}

/// Limit of the class gap `h(1) − h(−1)` of the three-neuron flow.
#[pyfunction]
fn gap_limit(p: [f64; 3]) -> f64 {
    cx::gap_limit(p)
}

/// Margin statistics of a trained mean-field ReLU network.
#[pyclass(frozen, get_all)]
struct MarginRun {
    normalized_margin: f64,
    path_norm: f64,
    spread_positive: f64,
    spread_negative: f64,
    fitted_b: f64,
    steps: usize,
}

#[pyfunction]
#[pyo3(signature = (particles = 500, t_end = 1e5, dt = 10.0, seed = 0))]
fn train_margin(particles: usize, t_end: f64, dt: f64, seed: u64) -> PyResult<MarginRun> {
    let data = MarginDataset::standard();
    let run = train_mean_field_relu(&data, particles, t_end, dt, seed).map_err(py_err)?;
    let r = margin_report(&run.ensemble, &data).map_err(py_err)?;
    Ok(MarginRun {
        normalized_margin: r.normalized_margin,
        path_norm: r.path_norm,
        spread_positive: r.spread_positive,
        spread_negative: r.spread_negative,
        fitted_b: r.fitted_b,
        steps: run.steps,
    })
}

/// `f_b(x)` of the one-parameter family of max-margin classifiers.
#[pyfunction]
fn f_b(b: f64, x: f64) -> PyResult<f64> {
    cx::f_b_classifier(b, x).map_err(py_err)
}

/// Collapse metrics of features given as one row per sample, with an
/// optional `k × dim` map.
#[pyfunction]
#[pyo3(signature = (features, labels, map = None))]
fn collapse_report(features: Vec<Vec<f64>>, labels: Vec<usize>, map: Option<Vec<Vec<f64>>>) -> PyResult<Vec<(String, f64)>> {
    let y = dense(&features, "features")?.transpose();
    let a = map.map(|m| dense(&m, "map")).transpose()?;
    let r = metrics::collapse_report(&y, &labels, a.as_ref()).map_err(py_err)?;
    Ok(r.scalar_fields().into_iter().map(|(n, v)| (n.to_string(), v)).collect())
}

/// Runs a single-experiment JSON config and returns its report entries.
#[pyfunction]
fn run(config: &str) -> PyResult<Vec<(String, f64)>> {
    let plan = parse_config(config).map_err(py_err)?;
    if plan.is_grid {
        return Err(PyValueError::new_err("grid configs are only supported by the command-line tool"));
    }
    let (_, cfg) = &plan.cells[0];
    let mut report = run_experiment(cfg).map_err(py_err)?.report;
    report.push(("seed".to_string(), cfg.seed() as f64));
    Ok(report)
}

/// Runs a verification suite (or `"all"`) and returns `(suite, name, measured, passed)` rows.
#[pyfunction]
fn verify(py: Python<'_>, suite: &str) -> PyResult<Vec<(String, String, f64, bool)>> {
    let checks = py.detach(|| run_suite(suite)).map_err(py_err)?;
    Ok(checks.into_iter().map(|c| (c.suite.to_string(), c.name, c.measured, c.passed)).collect())
}

#[pymodule]
fn collapse_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NonConvergedError", m.py().get_type::<NonConvergedError>())?;
    m.add_class::<Simplex>()?;
    m.add_class::<FinalLayerSolution>()?;
    m.add_class::<PenultimateRun>()?;
    m.add_class::<MarginRun>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(grad_phi, m)?)?;
    m.add_function(wrap_pyfunction!(hess_phi, m)?)?;
    m.add_function(wrap_pyfunction!(lp_norm, m)?)?;
    m.add_function(wrap_pyfunction!(project_lp_ball, m)?)?;
    m.add_function(wrap_pyfunction!(solve_final_layer, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_penultimate, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_three_neuron, m)?)?;
    m.add_function(wrap_pyfunction!(gap_limit, m)?)?;
    m.add_function(wrap_pyfunction!(train_margin, m)?)?;
    m.add_function(wrap_pyfunction!(f_b, m)?)?;
    m.add_function(wrap_pyfunction!(collapse_report, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
