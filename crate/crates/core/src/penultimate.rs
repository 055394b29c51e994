//! Penultimate-layer geometry: features `y_i ∈ B_R(0) ⊂ ℝᵐ` and a linear
//! map `A: ℝᵐ → ℝᵏ` with operator norm at most one, trained jointly to
//! minimize `Σ_i p_i Φ_i(A y_i)`.
//!
//! At a minimizer the features form a centered regular simplex of radius `R`
//! and `A` is an isometric embedding of their span onto the final-layer
//! simplex.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, LabError, Result};
use crate::loss::{phi_raw, softmax_raw, LabeledPointSet, LogitVector};
use crate::simplex::{regular_simplex_gram, simplex_l2};

/// Slack allowed on the feature radius and the operator norm.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const ARMIJO_C: f64 = 1e-4;
const SPAN_RANK_TOL: f64 = 1e-6;
const MAX_STEP: f64 = 1e4;
const MIN_STEP: f64 = 1e-30;

/// Features (columns of `y`, one per class) and the final linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct PenultimateState {
    y: DMatrix<f64>,
    a: DMatrix<f64>,
    radius: f64,
}

impl PenultimateState {
    /// `y` is `m × k` with one feature per column, `a` is `k × m`.
    pub fn new(y: DMatrix<f64>, a: DMatrix<f64>, radius: f64) -> Result<Self> {
        let (m, k) = y.shape();
        if k < 2 {
            return Err(invalid(format!("need at least two classes, got k = {k}")));
        }
        if a.shape() != (k, m) {
            return Err(invalid(format!("map has shape {:?}, expected ({k}, {m})", a.shape())));
        }
        if m + 1 < k {
            return Err(invalid(format!("feature dimension m = {m} must be at least k − 1 = {}", k - 1)));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid(format!("radius must be positive, got {radius}")));
        }
        if y.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("state has non-finite entries"));
        }
        for (i, col) in y.column_iter().enumerate() {
            if col.norm() > radius + FEASIBILITY_TOL {
                return Err(invalid(format!("feature {i} has norm {} > R = {radius}", col.norm())));
            }
        }
        let sigma = spectral_norm(&a)?;
        if sigma > 1.0 + FEASIBILITY_TOL {
            return Err(invalid(format!("map has operator norm {sigma} > 1")));
        }
        Ok(Self { y, a, radius })
    }

    /// Exact minimizer: the regular simplex written in a Helmert basis of
    /// `(1,…,1)^⊥`, padded with zeros to dimension `m`, and `A` the
    /// corresponding partial isometry.
    pub fn oracle(k: usize, m: usize, radius: f64) -> Result<Self> {
        if m + 1 < k {
            return Err(invalid(format!("feature dimension m = {m} must be at least k − 1 = {}", k - 1)));
        }
        let simplex = simplex_l2(k, radius)?;
        let basis = ones_complement_basis(k);
        let mut y = DMatrix::zeros(m, k);
        for (i, z) in simplex.vertices().iter().enumerate() {
            let coords = basis.transpose() * z.as_vector();
            y.view_mut((0, i), (k - 1, 1)).copy_from(&coords);
        }
        let mut a = DMatrix::zeros(k, m);
        a.view_mut((0, 0), (k, k - 1)).copy_from(&basis);
        Self::new(y, a, radius)
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn feature(&self, i: usize) -> DVector<f64> {
        self.y.column(i).into_owned()
    }

    /// Final-layer outputs `A y_i`, one column per class.
    pub fn outputs(&self) -> DMatrix<f64> {
        &self.a * &self.y
    }

    pub fn output_vectors(&self) -> Vec<LogitVector> {
        let z = self.outputs();
        z.column_iter()
            .map(|c| LogitVector::from_vector_unchecked(c.into_owned()))
            .collect()
    }

    /// `Σ_i w_i Φ_i(A y_i)`.
    pub fn risk(&self, weights: &[f64]) -> f64 {
        risk_of(&self.a, &self.y, weights)
    }

    /// Gram matrix `⟨y_i, y_j⟩` of the features.
    pub fn feature_gram(&self) -> DMatrix<f64> {
        self.y.transpose() * &self.y
    }

    /// Replaces `A` by `A P_Y`, with `P_Y` the orthogonal projector onto the
    /// span of the features. Outputs are unchanged and the operator norm does
    /// not grow; the result is the minimal-Frobenius-norm map with these outputs
    /// among maps that agree with `A` on the span.
    pub fn restrict_map_to_span(&mut self) -> Result<()> {
        let q = span_basis(&self.y)?;
        self.a = &self.a * (&q * q.transpose());
        Ok(())
    }
}

fn risk_of(a: &DMatrix<f64>, y: &DMatrix<f64>, weights: &[f64]) -> f64 {
    let z = a * y;
    z.column_iter()
        .enumerate()
        .map(|(i, c)| weights[i] * phi_raw(i, c.as_slice()))
        .sum()
}

/// Orthonormal Helmert basis of `(1,…,1)^⊥ ⊂ ℝᵏ`, as the columns of a `k × (k−1)` matrix.
pub fn ones_complement_basis(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k - 1, |row, col| {
        let j = (col + 1) as f64;
        let scale = 1.0 / (j * (j + 1.0)).sqrt();
        if row <= col {
            scale
        } else if row == col + 1 {
            -j * scale
        } else {
            0.0
        }
    })
}

/// Applies `σ ↦ f(σ)` to the singular values of `a`, keeping its singular
/// vectors. Works through the eigendecomposition of the smaller Gram matrix.
fn map_singular_values(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let left = a.nrows() <= a.ncols();
    let gram = if left { a * a.transpose() } else { a.transpose() * a };
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 0)
        .ok_or_else(|| LabError::NumericFailure("symmetric eigendecomposition did not converge".into()))?;
    let factors = eig.eigenvalues.map(|l| {
        let sigma = l.max(0.0).sqrt();
        if sigma > 0.0 {
            f(sigma) / sigma
        } else {
            1.0
        }
    });
    let v = &eig.eigenvectors;
    let scale = v * DMatrix::from_diagonal(&factors) * v.transpose();
    Ok(if left { scale * a } else { a * scale })
}

/// Singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let gram = if a.nrows() <= a.ncols() { a * a.transpose() } else { a.transpose() * a };
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 0)
        .ok_or_else(|| LabError::NumericFailure("symmetric eigendecomposition did not converge".into()))?;
    let mut sv: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// Orthonormal basis (columns) of the column span of `y`.
fn span_basis(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(y.transpose() * y, f64::EPSILON, 0)
        .ok_or_else(|| LabError::NumericFailure("symmetric eigendecomposition did not converge".into()))?;
    let top = eig.eigenvalues.max().max(0.0);
    // Numerical rank at relative singular value 1e-6: a converged feature set
    // is centered only to solver accuracy, so its last singular value is of
    // the order of the residual rather than zero.
    let cutoff = SPAN_RANK_TOL * SPAN_RANK_TOL * top;
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > cutoff && l > 0.0)
        .map(|(i, &l)| y * eig.eigenvectors.column(i) / l.sqrt())
        .collect();
    if cols.is_empty() {
        return Ok(DMatrix::zeros(y.nrows(), 0));
    }
    // one Gram–Schmidt pass against round-off
    Ok(DMatrix::from_columns(&cols).qr().q())
}

/// Projection onto `{‖A‖_{op} ≤ 1}`: singular values are clipped at one.
///
/// Feasible inputs are returned unchanged.
pub fn project_spectral(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    if a.is_empty() || spectral_norm(a)? <= 1.0 {
        return Ok(a.clone());
    }
    map_singular_values(a, |s| s.min(1.0))
}

fn project_feature_ball(y: &mut DMatrix<f64>, radius: f64) {
    for mut col in y.column_iter_mut() {
        let n = col.norm();
        if n > radius {
            col *= radius / n;
        }
    }
}

/// Settings for [`optimize_penultimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenultimateSettings {
    /// Initial step for the feature update.
    pub feature_step: f64,
    /// Initial step for the map update.
    pub map_step: f64,
    pub max_iter: usize,
    /// Bound on the combined projected-gradient residual.
    pub tol: f64,
    pub seed: u64,
    /// Trace every n-th iteration (the first and last are always kept).
    pub record_every: usize,
}

impl Default for PenultimateSettings {
    fn default() -> Self {
        Self { feature_step: 1.0, map_step: 1.0, max_iter: 100_000, tol: 1e-8, seed: 0, record_every: 1 }
    }
}

impl PenultimateSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("feature_step", self.feature_step), ("map_step", self.map_step), ("tol", self.tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 || self.record_every == 0 {
            return Err(invalid("max_iter and record_every must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the penultimate-solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenultimateRecord {
    pub iteration: usize,
    pub risk: f64,
    /// `max |⟨y_i, y_j⟩ − R²(kδ_ij − 1)/(k−1)|`.
    pub gram_deviation: f64,
    /// `max |⟨Ay_i, Ay_j⟩ − ⟨y_i, y_j⟩|`.
    pub isometry_residual: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenultimateRun {
    pub state: PenultimateState,
    pub risk: f64,
    /// Risk of the final-layer simplex at the same radius.
    pub oracle_risk: f64,
    pub iterations: usize,
    pub residual: f64,
    pub trace: Vec<PenultimateRecord>,
}

fn record(it: usize, a: &DMatrix<f64>, y: &DMatrix<f64>, weights: &[f64], target: &DMatrix<f64>, residual: f64) -> PenultimateRecord {
    let gram = y.transpose() * y;
    let ay = a * y;
    let out_gram = ay.transpose() * &ay;
    PenultimateRecord {
        iteration: it,
        risk: risk_of(a, y, weights),
        gram_deviation: (&gram - target).amax(),
        isometry_residual: (&out_gram - &gram).amax(),
        residual,
    }
}

/// `G` with columns `w_i (softmax(A y_i) − e_i)`.
fn output_gradients(a: &DMatrix<f64>, y: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let z = a * y;
    let mut g = DMatrix::zeros(z.nrows(), z.ncols());
    for (i, col) in z.column_iter().enumerate() {
        let mut gi = softmax_raw(col.as_slice());
        gi[i] -= 1.0;
        g.set_column(i, &(gi * weights[i]));
    }
    g
}

/// Alternating projected gradient descent on `(Y, A)`.
///
/// Each iteration takes an Armijo step in the features (projected onto the
/// radius-`R` ball column by column) followed by an Armijo step in the map
/// (projected onto the unit operator-norm ball). The returned state has its
/// map restricted to the span of the features.
pub fn optimize_penultimate(
    dataset: &LabeledPointSet,
    m: usize,
    radius: f64,
    settings: &PenultimateSettings,
) -> Result<PenultimateRun> {
    settings.validate()?;
    let k = dataset.k();
    if k < 2 {
        return Err(invalid(format!("need at least two classes, got k = {k}")));
    }
    if m + 1 < k {
        return Err(invalid(format!("feature dimension m = {m} must be at least k − 1 = {}", k - 1)));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    if dataset.members().iter().any(|c| c.len() != 1) {
        return Err(invalid("penultimate solver needs exactly one point per class"));
    }
    let weights = dataset.class_weights();
    let simplex = simplex_l2(k, radius)?;
    let oracle_risk: f64 = (0..k)
        .map(|i| weights[i] * phi_raw(i, simplex.vertex(i).expect("in range").as_slice()))
        .sum();
    let target = regular_simplex_gram(k, radius);

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let mut a = {
        // random partial isometry: all singular values set to one
        map_singular_values(&gauss(k, m), |_| 1.0)?
    };
    let mut y = gauss(m, k);
    for mut col in y.column_iter_mut() {
        let n = col.norm();
        col *= 0.5 * radius / n;
    }

    let mut f = risk_of(&a, &y, &weights);
    let (mut step_y, mut step_a) = (settings.feature_step, settings.map_step);
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 0..settings.max_iter {
        let g = output_gradients(&a, &y, &weights);
        let grad_y = a.transpose() * &g;
        let grad_a = &g * y.transpose();
        let mut probe_y = &y - &grad_y;
        project_feature_ball(&mut probe_y, radius);
        let probe_a = project_spectral(&(&a - &grad_a))?;
        residual = ((&y - probe_y).norm_squared() + (&a - probe_a).norm_squared()).sqrt();

        let done = residual <= settings.tol;
        if it % settings.record_every == 0 || done {
            trace.push(record(it, &a, &y, &weights, &target, residual));
        }
        if done {
            let mut state = PenultimateState::new(y, a, radius)?;
            state.restrict_map_to_span()?;
            let risk = state.risk(&weights);
            return Ok(PenultimateRun { state, risk, oracle_risk, iterations: it, residual, trace });
        }

        // feature step
        let mut moved = false;
        step_y = (2.0 * step_y).min(MAX_STEP);
        loop {
            let mut cand = &y - step_y * &grad_y;
            project_feature_ball(&mut cand, radius);
            let fc = risk_of(&a, &cand, &weights);
            if fc <= f + ARMIJO_C * grad_y.dot(&(&cand - &y)) {
                y = cand;
                f = fc;
                moved = true;
                break;
            }
            step_y *= 0.5;
            if step_y < MIN_STEP {
                break;
            }
        }

        // map step, with the gradient at the updated features
        let grad_a = output_gradients(&a, &y, &weights) * y.transpose();
        step_a = (2.0 * step_a).min(MAX_STEP);
        loop {
            let cand = project_spectral(&(&a - step_a * &grad_a))?;
            let fc = risk_of(&cand, &y, &weights);
            if fc <= f + ARMIJO_C * grad_a.dot(&(&cand - &a)) {
                a = cand;
                f = fc;
                moved = true;
                break;
            }
            step_a *= 0.5;
            if step_a < MIN_STEP {
                break;
            }
        }
        if !moved {
            // stalled at round-off level above the requested tolerance
            return Err(LabError::NonConverged {
                iterations: it + 1,
                residual,
                last: y.iter().chain(a.iter()).copied().collect(),
            });
        }
    }
    Err(LabError::NonConverged {
        iterations: settings.max_iter,
        residual,
        last: y.iter().chain(a.iter()).copied().collect(),
    })
}

/// Residuals of the isometric-embedding characterization.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometryReport {
    /// `max_ij |⟨Ay_i, Ay_j⟩ − ⟨y_i, y_j⟩|`.
    pub gram_deviation: f64,
    /// `‖Σ_i y_i‖`.
    pub center_norm: f64,
    /// `max_i |‖y_i‖ − R|`.
    pub radius_deviation: f64,
    /// Singular values of `A` restricted to `span{y_i}`, descending.
    pub restricted_singular_values: Vec<f64>,
}

pub fn check_isometry(state: &PenultimateState) -> IsometryReport {
    let gram = state.feature_gram();
    let z = state.outputs();
    let out_gram = z.transpose() * &z;
    let center: DVector<f64> = state.y.column_sum();
    let radius_deviation = state
        .y
        .column_iter()
        .map(|c| (c.norm() - state.radius).abs())
        .fold(0.0, f64::max);
    let restricted_singular_values = match span_basis(&state.y) {
        Ok(q) if q.ncols() > 0 => {
            singular_values(&(&state.a * q)).unwrap_or_default()
        }
        _ => Vec::new(),
    };
    IsometryReport {
        gram_deviation: (&out_gram - &gram).amax(),
        center_norm: center.norm(),
        radius_deviation,
        restricted_singular_values,
    }
}

/// `(1/k) Σ_i y_i`.
pub fn center_of_mass(state: &PenultimateState) -> DVector<f64> {
    state.y.column_sum() / state.k() as f64
}
