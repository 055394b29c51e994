//! Closed-form minimizers of `Φ_i` on the ℓᵖ ball of radius `R`.
//!
//! For `1 < p < ∞` the minimizer of `Φ_i` over `{‖z‖_p ≤ R}` is the vertex
//! `z_i = α e_i + β Σ_{j≠i} e_j` with `α > 0 > β` fixed by
//!
//! ```text
//! |α|^p + (k−1)|β|^p = R^p
//! |α|^{p−2}α + (k−1)|β|^{p−2}β = 0
//! ```
//!
//! For `p = 2` the vertices form a centered regular simplex.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, LabError, Result};
use crate::loss::{grad_phi_raw, LogitVector};

/// Validates a norm exponent for the ℓᵖ machinery.
pub fn check_norm_exponent(p: f64) -> Result<()> {
    if p.is_nan() {
        return Err(invalid("norm exponent is NaN"));
    }
    if p <= 1.0 || p.is_infinite() {
        return Err(LabError::UnsupportedNorm(p));
    }
    Ok(())
}

fn check_shape(k: usize, radius: f64) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("need at least two classes, got k = {k}")));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    Ok(())
}

/// `‖z‖_p`.
pub fn lp_norm(z: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        return z.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let max = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    max * z.iter().map(|v| (v.abs() / max).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Closed-form optimal vertex description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexConfig {
    k: usize,
    radius: f64,
    p: f64,
    alpha: f64,
    beta: f64,
}

/// Euclidean simplex: `α = √((k−1)/k)·R`, `β = −R/√(k(k−1))`.
pub fn simplex_l2(k: usize, radius: f64) -> Result<SimplexConfig> {
    check_shape(k, radius)?;
    let kf = k as f64;
    Ok(SimplexConfig {
        k,
        radius,
        p: 2.0,
        alpha: ((kf - 1.0) / kf).sqrt() * radius,
        beta: -radius / (kf * (kf - 1.0)).sqrt(),
    })
}

/// ℓᵖ vertex for `1 < p < ∞`.
pub fn simplex_lp(k: usize, radius: f64, p: f64) -> Result<SimplexConfig> {
    check_shape(k, radius)?;
    check_norm_exponent(p)?;
    let km1 = k as f64 - 1.0;
    let q = km1.powf(1.0 / (p - 1.0));
    let share = q / (1.0 + q);
    let rest = 1.0 / (1.0 + q);
    Ok(SimplexConfig {
        k,
        radius,
        p,
        alpha: share.powf(1.0 / p) * radius,
        beta: -(rest / km1).powf(1.0 / p) * radius,
    })
}

impl SimplexConfig {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `α e_i + β Σ_{j≠i} e_j`.
    pub fn vertex(&self, i: usize) -> Result<LogitVector> {
        if i >= self.k {
            return Err(invalid(format!("class index {i} out of range for k = {}", self.k)));
        }
        let mut z = DVector::from_element(self.k, self.beta);
        z[i] = self.alpha;
        Ok(LogitVector::from_vector_unchecked(z))
    }

    pub fn vertices(&self) -> Vec<LogitVector> {
        (0..self.k).map(|i| self.vertex(i).expect("index in range")).collect()
    }

    /// Relative violation of `|α|^p + (k−1)|β|^p = R^p`.
    pub fn constraint_residual(&self) -> f64 {
        let lhs = self.alpha.abs().powf(self.p) + (self.k as f64 - 1.0) * self.beta.abs().powf(self.p);
        (lhs - self.radius.powf(self.p)).abs() / self.radius.powf(self.p)
    }

    /// Absolute violation of `|α|^{p−2}α + (k−1)|β|^{p−2}β = 0`, scaled by `R^{1−p}`.
    pub fn stationarity_residual(&self) -> f64 {
        let f = |v: f64| v.signum() * v.abs().powf(self.p - 1.0);
        (f(self.alpha) + (self.k as f64 - 1.0) * f(self.beta)).abs() / self.radius.powf(self.p - 1.0)
    }

    /// Squared distance between two distinct vertices, `2(α−β)²`.
    ///
    /// Only defined for `p = 2`, where it must equal `2kR²/(k−1)`.
    pub fn pairwise_distance_sq(&self) -> Result<f64> {
        self.require_euclidean()?;
        let d = 2.0 * (self.alpha - self.beta).powi(2);
        let kf = self.k as f64;
        let expected = 2.0 * kf / (kf - 1.0) * self.radius * self.radius;
        if (d - expected).abs() > 1e-10 * expected {
            return Err(LabError::NumericFailure(format!(
                "pairwise distance {d} disagrees with 2kR²/(k−1) = {expected}"
            )));
        }
        Ok(d)
    }

    /// Gram matrix of the vertices (`p = 2` only).
    pub fn gram(&self) -> Result<DMatrix<f64>> {
        self.require_euclidean()?;
        let verts = self.vertices();
        Ok(DMatrix::from_fn(self.k, self.k, |i, j| {
            verts[i].as_vector().dot(verts[j].as_vector())
        }))
    }

    fn require_euclidean(&self) -> Result<()> {
        if self.p != 2.0 {
            return Err(LabError::UnsupportedNorm(self.p));
        }
        Ok(())
    }
}

/// Target Gram matrix of the centered regular simplex, `R²(kδ_ij − 1)/(k−1)`.
pub fn regular_simplex_gram(k: usize, radius: f64) -> DMatrix<f64> {
    let kf = k as f64;
    let r2 = radius * radius;
    DMatrix::from_fn(k, k, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        r2 * (kf * delta - 1.0) / (kf - 1.0)
    })
}

/// Outward normal of the ℓᵖ sphere at `z`, up to scale: `sign(z)|z|^{p−1}`.
pub fn lp_sphere_normal(z: &[f64], p: f64) -> DVector<f64> {
    DVector::from_iterator(z.len(), z.iter().map(|v| v.signum() * v.abs().powf(p - 1.0)))
}

/// Lagrange stationarity of `Φ_j` on the ℓᵖ sphere at `z`.
///
/// Fits `∇Φ_j(z) ≈ λ·sign(z)|z|^{p−1}` by least squares and returns
/// `(λ, ‖∇Φ_j(z) − λ·sign(z)|z|^{p−1}‖)`.
pub fn lagrange_residual(j: usize, z: &LogitVector, p: f64) -> Result<(f64, f64)> {
    check_norm_exponent(p)?;
    if j >= z.len() {
        return Err(invalid(format!("class index {j} out of range for k = {}", z.len())));
    }
    let g = grad_phi_raw(j, z.as_slice());
    let n = lp_sphere_normal(z.as_slice(), p);
    let nn = n.norm_squared();
    if nn == 0.0 {
        return Err(invalid("lagrange residual undefined at the origin"));
    }
    let lambda = g.dot(&n) / nn;
    Ok((lambda, (g - lambda * n).norm()))
}
