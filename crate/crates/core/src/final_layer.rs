//! Final-layer geometry: collapse of class outputs to their means and
//! projected gradient descent of `Φ_j` over ℓᵖ balls.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, LabError, Result};
use crate::loss::{grad_phi_raw, phi_raw, risk, LabeledPointSet, LogitVector};
use crate::simplex::{check_norm_exponent, lp_norm};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_STEP: f64 = 1e6;
const MIN_BB_STEP: f64 = 1e-10;
const MIN_STEP: f64 = 1e-30;
const NONMONOTONE_MEMORY: usize = 10;
const PROJECTION_MAX_ITER: usize = 100;

/// Outputs `h(x)` for every point of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutputs {
    dataset: LabeledPointSet,
    outputs: BTreeMap<usize, LogitVector>,
}

impl ClassifierOutputs {
    pub fn new(dataset: LabeledPointSet, outputs: BTreeMap<usize, LogitVector>) -> Result<Self> {
        for p in dataset.points() {
            match outputs.get(&p.id) {
                None => return Err(invalid(format!("no output for input id {}", p.id))),
                Some(z) if z.len() != dataset.k() => {
                    return Err(invalid(format!(
                        "output for input id {} has length {}, expected {}",
                        p.id,
                        z.len(),
                        dataset.k()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self { dataset, outputs })
    }

    pub fn dataset(&self) -> &LabeledPointSet {
        &self.dataset
    }

    pub fn outputs(&self) -> &BTreeMap<usize, LogitVector> {
        &self.outputs
    }

    pub fn get(&self, id: usize) -> Option<&LogitVector> {
        self.outputs.get(&id)
    }

    pub fn risk(&self) -> f64 {
        risk(&self.dataset, &self.outputs).expect("outputs validated at construction")
    }
}

/// `z − mean(z)·(1,…,1)`.
pub fn project_ones_complement(z: &LogitVector) -> LogitVector {
    LogitVector::from_vector_unchecked(ones_complement(z.as_vector()))
}

fn ones_complement(z: &DVector<f64>) -> DVector<f64> {
    let mean = z.mean();
    z.map(|v| v - mean)
}

/// Replaces every output by the probability-weighted mean of its class.
pub fn collapse_to_means(outputs: &ClassifierOutputs) -> Result<ClassifierOutputs> {
    let ds = outputs.dataset();
    let k = ds.k();
    let mut sums = vec![DVector::<f64>::zeros(k); k];
    let mut mass = vec![0.0; k];
    for p in ds.points() {
        sums[p.class] += outputs.outputs[&p.id].as_vector() * p.weight;
        mass[p.class] += p.weight;
    }
    if let Some(empty) = mass.iter().position(|&m| m == 0.0) {
        return Err(invalid(format!("class {empty} has no points")));
    }
    let means: Vec<DVector<f64>> = sums.into_iter().zip(&mass).map(|(s, m)| s / *m).collect();
    let collapsed = ds
        .points()
        .iter()
        .map(|p| (p.id, LogitVector::from_vector_unchecked(means[p.class].clone())))
        .collect();
    Ok(ClassifierOutputs { dataset: ds.clone(), outputs: collapsed })
}

/// Euclidean projection onto `{‖x‖_p ≤ R}`.
///
/// Points inside the ball are returned unchanged. Otherwise the KKT system
/// `z_i − x_i = λ·sign(x_i)|x_i|^{p−1}`, `‖x‖_p = R` is solved with a
/// safeguarded Newton iteration on the scalar multiplier `λ`.
pub fn project_lp_ball(z: &LogitVector, radius: f64, p: f64) -> Result<LogitVector> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    check_norm_exponent(p)?;
    project_lp_ball_raw(z.as_vector(), radius, p).map(LogitVector::from_vector_unchecked)
}

pub(crate) fn project_lp_ball_raw(z: &DVector<f64>, radius: f64, p: f64) -> Result<DVector<f64>> {
    let norm = lp_norm(z.as_slice(), p);
    if norm <= radius {
        return Ok(z.clone());
    }
    if p == 2.0 {
        return Ok(z * (radius / norm));
    }
    // Work in units of R so the scalar equations are O(1).
    let a: Vec<f64> = z.iter().map(|v| v.abs() / radius).collect();
    let target = 1.0;
    let excess = |lambda: f64| -> (f64, f64) {
        // g(λ) = Σ u_i^p − 1 and its derivative
        let mut g = -target;
        let mut dg = 0.0;
        for &ai in &a {
            let u = solve_coordinate(ai, lambda, p);
            if u > 0.0 {
                let up1 = u.powf(p - 1.0);
                let du = -up1 / (1.0 + lambda * (p - 1.0) * u.powf(p - 2.0));
                g += u * up1;
                dg += p * up1 * du;
            }
        }
        (g, dg)
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    while excess(hi).0 > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(LabError::NumericFailure("could not bracket the ℓᵖ projection multiplier".into()));
        }
    }
    let mut lambda = 0.5 * hi;
    let mut converged = false;
    for _ in 0..PROJECTION_MAX_ITER {
        let (g, dg) = excess(lambda);
        if g.abs() <= 1e-15 {
            converged = true;
            break;
        }
        if g > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= 1e-16 * hi {
            converged = true;
            break;
        }
        let newton = lambda - g / dg;
        lambda = if dg < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    if !converged {
        return Err(LabError::NumericFailure(format!(
            "ℓᵖ projection multiplier did not converge in {PROJECTION_MAX_ITER} iterations"
        )));
    }
    let mut x = DVector::from_iterator(
        z.len(),
        z.iter().zip(&a).map(|(zi, &ai)| zi.signum() * solve_coordinate(ai, lambda, p)),
    );
    // absorb the residual of the scalar solve so the radius is hit exactly
    let n = lp_norm(x.as_slice(), p);
    if n > 0.0 {
        x *= 1.0 / n;
    }
    Ok(x * radius)
}

/// Solves `u + λ u^{p−1} = a` for `u ∈ [0, a]`.
///
/// For `p ≥ 2` Newton runs in `u`; for `p < 2` it runs in `w = u^{p−1}`,
/// where the equation reads `w^{1/(p−1)} + λw = a`. Both forms are convex
/// and increasing, so Newton started to the right of the root decreases
/// monotonically onto it.
fn solve_coordinate(a: f64, lambda: f64, p: f64) -> f64 {
    if a == 0.0 || lambda == 0.0 {
        return a;
    }
    let euclid_side = p >= 2.0;
    let (e, mut x) = if euclid_side { (p - 1.0, a) } else { (1.0 / (p - 1.0), a / lambda) };
    let f = |x: f64| -> (f64, f64) {
        if euclid_side {
            (x + lambda * x.powf(e) - a, 1.0 + lambda * e * x.powf(e - 1.0))
        } else {
            (x.powf(e) + lambda * x - a, e * x.powf(e - 1.0) + lambda)
        }
    };
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx <= 0.0 {
            break;
        }
        let next = (x - fx / dfx).max(0.0);
        let done = next >= x || x - next <= 1e-16 * x;
        x = next;
        if done {
            break;
        }
    }
    if euclid_side {
        x
    } else {
        x.powf(e)
    }
}

/// Settings for [`minimize_phi_on_ball`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub step: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub radius: f64,
    pub p: f64,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { step: 1.0, max_iter: 20_000, tol: 1e-12, radius: 1.0, p: 2.0, seed: 0 }
    }
}

impl SolverSettings {
    pub fn with_ball(radius: f64, p: f64) -> Self {
        Self { radius, p, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(invalid(format!("step must be positive, got {}", self.step)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(invalid(format!("radius must be positive, got {}", self.radius)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        check_norm_exponent(self.p)
    }
}

/// One row of a solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    pub objective: f64,
    pub residual: f64,
    pub step: f64,
}

/// Converged output of [`minimize_phi_on_ball`].
#[derive(Debug, Clone, PartialEq)]
pub struct BallSolution {
    pub z: LogitVector,
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub trace: Vec<IterateRecord>,
}

/// Minimizes `Φ_j` over `{z ∈ ℝᵏ : ‖z‖_p ≤ R}` by spectral projected
/// gradient descent: Barzilai–Borwein trial steps (the first one is
/// `settings.step`) and a nonmonotone Armijo search over the last ten
/// objective values along the projected direction.
///
/// Convergence is declared when the projected-gradient residual
/// `‖z − P(z − ∇Φ_j(z))‖` drops to `settings.tol`.
pub fn minimize_phi_on_ball(j: usize, k: usize, settings: &SolverSettings) -> Result<BallSolution> {
    settings.validate()?;
    if k < 2 {
        return Err(invalid(format!("need at least two classes, got k = {k}")));
    }
    if j >= k {
        return Err(invalid(format!("class index {j} out of range for k = {k}")));
    }
    let (radius, p) = (settings.radius, settings.p);

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
    let n = lp_norm(z.as_slice(), p);
    z *= 0.5 * radius / n;

    let mut f = phi_raw(j, z.as_slice());
    let mut g = ones_complement(&grad_phi_raw(j, z.as_slice()));
    let mut step = settings.step;
    let mut recent = VecDeque::with_capacity(NONMONOTONE_MEMORY);
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 0..settings.max_iter {
        residual = (&z - project_lp_ball_raw(&(&z - &g), radius, p)?).norm();
        trace.push(IterateRecord { iteration: it, objective: f, residual, step });
        if residual <= settings.tol {
            return Ok(BallSolution {
                z: LogitVector::from_vector_unchecked(z),
                objective: f,
                residual,
                iterations: it,
                trace,
            });
        }
        if recent.len() == NONMONOTONE_MEMORY {
            recent.pop_front();
        }
        recent.push_back(f);
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let d = project_lp_ball_raw(&(&z - step * &g), radius, p)? - &z;
        let slope = g.dot(&d);
        let mut t = 1.0;
        let (z_next, f_next) = loop {
            let cand = &z + t * &d;
            let fc = phi_raw(j, cand.as_slice());
            if fc <= reference + ARMIJO_C * t * slope {
                break (cand, fc);
            }
            t *= BACKTRACK;
            if t < MIN_STEP {
                // no representable decrease left: the iterate is optimal to machine precision
                return Ok(BallSolution {
                    z: LogitVector::from_vector_unchecked(z),
                    objective: f,
                    residual,
                    iterations: it,
                    trace,
                });
            }
        };
        // Φ is flat along (1,…,1); strip that component from the gradient.
        let g_next = ones_complement(&grad_phi_raw(j, z_next.as_slice()));
        let dz = &z_next - &z;
        let dg = &g_next - &g;
        let curvature = dz.dot(&dg);
        step = if curvature > 0.0 { (dz.norm_squared() / curvature).clamp(MIN_BB_STEP, MAX_STEP) } else { MAX_STEP };
        z = z_next;
        f = f_next;
        g = g_next;
    }
    Err(LabError::NonConverged { iterations: settings.max_iter, residual, last: z.as_slice().to_vec() })
}

/// Per-class minimizers for a dataset together with the resulting risk.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalLayerSolution {
    pub vertices: Vec<LogitVector>,
    pub risk: f64,
}

/// Solves the final-layer problem for every class of `dataset`.
///
/// The classes do not interact, so each vertex is found independently and
/// the class weights only enter the reported risk.
pub fn solve_final_layer(dataset: &LabeledPointSet, settings: &SolverSettings) -> Result<FinalLayerSolution> {
    let weights = dataset.class_weights();
    if let Some(empty) = weights.iter().position(|&w| w == 0.0) {
        return Err(invalid(format!("class {empty} has no points")));
    }
    let k = dataset.k();
    let vertices = (0..k)
        .map(|j| minimize_phi_on_ball(j, k, settings).map(|s| s.z))
        .collect::<Result<Vec<_>>>()?;
    let risk = weights
        .iter()
        .enumerate()
        .map(|(j, w)| w * phi_raw(j, vertices[j].as_slice()))
        .sum();
    Ok(FinalLayerSolution { vertices, risk })
}
