//! Softmax cross-entropy: the pointwise loss `Φ_j(z) = log Σ exp(z_i) − z_j`,
//! its gradient and Hessian, and the weighted risk over a finite labeled set.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Tolerance on the total probability mass of a [`LabeledPointSet`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One data point: an opaque input id, its class and its probability weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub id: usize,
    pub class: usize,
    pub weight: f64,
}

/// A finite data distribution with class labels.
///
/// Weights are strictly positive and renormalized to sum to one exactly
/// after validation. Classes without points are allowed here; solvers that
/// need every class populated reject them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointSet {
    points: Vec<LabeledPoint>,
    k: usize,
}

impl LabeledPointSet {
    /// Validates and renormalizes. `k` defaults to `max class + 1`.
    pub fn new(points: Vec<LabeledPoint>, k: Option<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("labeled point set is empty"));
        }
        let max_class = points.iter().map(|p| p.class).max().unwrap_or(0);
        let k = k.unwrap_or(max_class + 1);
        if max_class >= k {
            return Err(invalid(format!("class index {max_class} out of range for k = {k}")));
        }
        let mut seen = HashSet::with_capacity(points.len());
        for p in &points {
            if !(p.weight.is_finite() && p.weight > 0.0) {
                return Err(invalid(format!("weight of point {} must be positive, got {}", p.id, p.weight)));
            }
            if !seen.insert(p.id) {
                return Err(invalid(format!("duplicate input id {}", p.id)));
            }
        }
        let total: f64 = points.iter().map(|p| p.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        let points = points
            .into_iter()
            .map(|p| LabeledPoint { weight: p.weight / total, ..p })
            .collect();
        Ok(Self { points, k })
    }

    /// Equal-weight points with ids `0..classes.len()`.
    pub fn uniform(classes: &[usize], k: Option<usize>) -> Result<Self> {
        let w = 1.0 / classes.len().max(1) as f64;
        let points = classes
            .iter()
            .enumerate()
            .map(|(id, &class)| LabeledPoint { id, class, weight: w })
            .collect();
        Self::new(points, k)
    }

    /// One point per class with the given class weights; point `i` has id `i` and class `i`.
    pub fn one_point_per_class(weights: &[f64]) -> Result<Self> {
        let points = weights
            .iter()
            .enumerate()
            .map(|(i, &weight)| LabeledPoint { id: i, class: i, weight })
            .collect();
        Self::new(points, Some(weights.len()))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total probability of each class.
    pub fn class_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.k];
        for p in &self.points {
            w[p.class] += p.weight;
        }
        w
    }

    /// Point indices grouped by class.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (idx, p) in self.points.iter().enumerate() {
            m[p.class].push(idx);
        }
        m
    }
}

/// Finite logits `z ∈ ℝᵏ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(DVector<f64>);

impl LogitVector {
    pub fn new(z: DVector<f64>) -> Result<Self> {
        if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("logit vector has non-finite entry {bad}")));
        }
        if z.is_empty() {
            return Err(invalid("logit vector is empty"));
        }
        Ok(Self(z))
    }

    pub fn from_slice(z: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(z))
    }

    pub fn zeros(k: usize) -> Self {
        Self(DVector::zeros(k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    // Callers guarantee finiteness.
    pub(crate) fn from_vector_unchecked(z: DVector<f64>) -> Self {
        debug_assert!(z.iter().all(|v| v.is_finite()));
        Self(z)
    }
}

impl AsRef<[f64]> for LogitVector {
    fn as_ref(&self) -> &[f64] {
        self.as_slice()
    }
}

/// A probability vector produced by [`softmax`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxDensity(DVector<f64>);

impl SoftmaxDensity {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// `log Σ exp(z_i)`, stabilized by subtracting the maximum.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_raw(z: &[f64]) -> DVector<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e = DVector::from_iterator(z.len(), z.iter().map(|v| (v - max).exp()));
    let s = e.sum();
    e /= s;
    e
}

pub(crate) fn phi_raw(j: usize, z: &[f64]) -> f64 {
    // log(1 + Σ_{i≠j} exp(z_i − z_j)) keeps full relative precision when
    // z_j dominates; otherwise fall back to log-sum-exp.
    let zj = z[j];
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if zj >= max {
        let rest: f64 = z.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| (v - zj).exp()).sum();
        rest.ln_1p()
    } else {
        log_sum_exp(z) - zj
    }
}

pub(crate) fn grad_phi_raw(j: usize, z: &[f64]) -> DVector<f64> {
    let mut g = softmax_raw(z);
    g[j] -= 1.0;
    g
}

pub fn softmax(z: &LogitVector) -> SoftmaxDensity {
    SoftmaxDensity(softmax_raw(z.as_slice()))
}

fn check_class(j: usize, k: usize) -> Result<()> {
    if j >= k {
        return Err(invalid(format!("class index {j} out of range for k = {k}")));
    }
    Ok(())
}

/// Cross-entropy of logits `z` against label `j`: `log Σ exp(z_i) − z_j`.
pub fn phi(j: usize, z: &LogitVector) -> Result<f64> {
    check_class(j, z.len())?;
    Ok(phi_raw(j, z.as_slice()))
}

/// `softmax(z) − e_j`.
pub fn grad_phi(j: usize, z: &LogitVector) -> Result<DVector<f64>> {
    check_class(j, z.len())?;
    Ok(grad_phi_raw(j, z.as_slice()))
}

/// `H = diag(π) − π πᵀ` with `π = softmax(z)`. The same for every label `j`.
pub fn hess_phi(z: &LogitVector) -> DMatrix<f64> {
    let pi = softmax_raw(z.as_slice());
    DMatrix::from_diagonal(&pi) - &pi * pi.transpose()
}

/// Weighted risk `Σ_x P(x) Φ_{ξ(x)}(h(x))`.
pub fn risk(dataset: &LabeledPointSet, outputs: &BTreeMap<usize, LogitVector>) -> Result<f64> {
    let mut total = 0.0;
    for p in dataset.points() {
        let z = outputs
            .get(&p.id)
            .ok_or_else(|| invalid(format!("no output for input id {}", p.id)))?;
        if z.len() != dataset.k() {
            return Err(invalid(format!(
                "output for input id {} has length {}, expected {}",
                p.id,
                z.len(),
                dataset.k()
            )));
        }
        total += p.weight * phi_raw(p.class, z.as_slice());
    }
    Ok(total)
}
