//! Snapshot collapse metrics: within-class variability, equinorm,
//! equiangularity and self-duality of class means.
//!
//! Class means `y_i` are centered at `M = (1/k) Σ_i y_i`, the unweighted mean
//! of the class means, so that class imbalance does not move the center.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Deviations of a set of class means from a centered regular simplex.
///
/// All four deviations are non-negative and vanish for a centered regular
/// simplex with a dual map.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    /// Pooled within-class variance `Σ_c Σ_{x∈c} ‖x − y_c‖² / (N − k)`; zero when
    /// every class has a single point.
    pub within_class_variance: f64,
    /// Coefficient of variation (population standard deviation over mean) of
    /// the norms `‖y_i − M‖`.
    pub equinorm_deviation: f64,
    /// `max_{i≠j} |cos∠(y_i − M, y_j − M) + 1/(k−1)|`.
    pub equiangular_deviation: f64,
    /// `max_i 1 − |cos∠(row_i(A), y_i − M)|`; absent when no map was supplied.
    pub self_duality_deviation: Option<f64>,
    /// Class means, one column per class.
    pub class_means: DMatrix<f64>,
    /// The center `M`.
    pub center: DVector<f64>,
}

impl CollapseReport {
    pub fn k(&self) -> usize {
        self.class_means.ncols()
    }

    /// Scalar fields as `(name, value)` pairs, in a fixed order, for flat
    /// serialization. The self-duality entry is omitted when absent.
    pub fn scalar_fields(&self) -> Vec<(&'static str, f64)> {
        let mut fields = vec![
            ("within_class_variance", self.within_class_variance),
            ("equinorm_deviation", self.equinorm_deviation),
            ("equiangular_deviation", self.equiangular_deviation),
        ];
        if let Some(s) = self.self_duality_deviation {
            fields.push(("self_duality_deviation", s));
        }
        fields
    }
}

/// Cosine of the angle between `u` and `v`; zero when either vector vanishes.
fn cosine(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Computes the collapse report for `features` (one point per column) with
/// class `labels[n] ∈ {0,…,k−1}`, where `k` is one more than the largest
/// label. `map`, when given, is the `k × dim` last-layer matrix whose rows are
/// compared with the centered class means.
pub fn collapse_report(
    features: &DMatrix<f64>,
    labels: &[usize],
    map: Option<&DMatrix<f64>>,
) -> Result<CollapseReport> {
    let (dim, n) = features.shape();
    if n == 0 || dim == 0 {
        return Err(invalid("features must be non-empty"));
    }
    if labels.len() != n {
        return Err(invalid(format!("{} labels for {n} feature vectors", labels.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(invalid("features contain non-finite entries"));
    }
    let k = labels.iter().max().map_or(0, |&c| c + 1);
    if k < 2 {
        return Err(invalid(format!("need at least two classes, got k = {k}")));
    }

    let mut sums = DMatrix::<f64>::zeros(dim, k);
    let mut counts = vec![0usize; k];
    for (col, &c) in features.column_iter().zip(labels) {
        let mut target = sums.column_mut(c);
        target += col;
        counts[c] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(invalid(format!("class {empty} has no points")));
    }
    let mut means = sums;
    for (c, mut col) in means.column_iter_mut().enumerate() {
        col /= counts[c] as f64;
    }

    let within_class_variance = if n == k {
        0.0
    } else {
        let scatter: f64 = features
            .column_iter()
            .zip(labels)
            .map(|(col, &c)| (col - means.column(c)).norm_squared())
            .sum();
        scatter / (n - k) as f64
    };

    let center: DVector<f64> = means.column_mean();
    let centered: Vec<DVector<f64>> = means.column_iter().map(|c| c - &center).collect();

    let norms: Vec<f64> = centered.iter().map(|v| v.norm()).collect();
    let mean_norm = norms.iter().sum::<f64>() / k as f64;
    let equinorm_deviation = if mean_norm == 0.0 {
        0.0
    } else {
        let var = norms.iter().map(|r| (r - mean_norm).powi(2)).sum::<f64>() / k as f64;
        var.sqrt() / mean_norm
    };

    let target = -1.0 / (k - 1) as f64;
    let mut equiangular_deviation: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let dev = (cosine(&centered[i], &centered[j]) - target).abs();
            equiangular_deviation = equiangular_deviation.max(dev);
        }
    }

    let self_duality_deviation = match map {
        None => None,
        Some(a) => {
            if a.shape() != (k, dim) {
                return Err(invalid(format!("map has shape {:?}, expected ({k}, {dim})", a.shape())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(invalid("map contains non-finite entries"));
            }
            let dev = (0..k)
                .map(|i| {
                    let row: DVector<f64> = a.row(i).transpose();
                    1.0 - cosine(&row, &centered[i]).abs()
                })
                .fold(0.0, f64::max);
            Some(dev)
        }
    };

    Ok(CollapseReport {
        within_class_variance,
        equinorm_deviation,
        equiangular_deviation,
        self_duality_deviation,
        class_means: means,
        center,
    })
}
