//! Mean-field two-layer ReLU network `f(x) = (1/m) Σ aᵢ relu(wᵢx + bᵢ)` on
//! a binary problem with classes in `[−2,−1]` and `[1,2]`.
//!
//! Training is the particle gradient flow of the logistic risk
//! `Σ_x P(x) log(1 + exp(−2ξ_x f(x)))`, discretized by explicit Euler in
//! mean-field time (each particle moves with velocity `−m ∂R/∂θᵢ`).
//! The normalized classifier `f / ‖f‖_path` is compared with the family of
//! maximum-margin classifiers `f_b`, all of which have margin ½ and none of
//! which is constant on a class.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, LabError, Result};

/// Number of grid points per class hull used for spread and fitting.
pub const HULL_SAMPLES: usize = 33;

// Euler steps start at dt/100 and grow by 10% per accepted step up to dt.
const INITIAL_STEP_FRACTION: f64 = 0.01;
const STEP_GROWTH: f64 = 1.1;

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub a: f64,
    pub w: f64,
    pub b: f64,
}

/// `m` particles with mean-field (`1/m`) scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    particles: Vec<Particle>,
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<Particle>) -> Result<Self> {
        if particles.is_empty() {
            return Err(invalid("ensemble needs at least one particle"));
        }
        if particles.iter().any(|p| !(p.a.is_finite() && p.w.is_finite() && p.b.is_finite())) {
            return Err(invalid("particle parameters must be finite"));
        }
        Ok(Self { particles })
    }

    /// Gaussian particles; `|a|` is shrunk to `√(w² + b²)` where it exceeds it.
    pub fn gaussian(m: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let particles = (0..m)
            .map(|_| {
                let (a, w, b) = (draw(), draw(), draw());
                let cap = (w * w + b * b).sqrt();
                Particle { a: if a.abs() > cap { a.signum() * cap } else { a }, w, b }
            })
            .collect();
        Self::new(particles)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.particles.iter().map(|p| p.a * relu(p.w * x + p.b)).sum::<f64>() / self.len() as f64
    }

    /// `(1/m) Σ |aᵢ|(|wᵢ| + |bᵢ|)`.
    pub fn path_norm(&self) -> f64 {
        self.particles.iter().map(|p| p.a.abs() * (p.w.abs() + p.b.abs())).sum::<f64>() / self.len() as f64
    }

    /// Multiplies every outer weight by `lambda`.
    pub fn scale_outer(&self, lambda: f64) -> Self {
        Self { particles: self.particles.iter().map(|p| Particle { a: lambda * p.a, ..*p }).collect() }
    }
}

/// Binary data on `[−2,−1] ∪ [1,2]` labeled by `sign(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginDataset {
    points: Vec<(f64, f64)>,
}

impl MarginDataset {
    /// Points `(x, weight)`; the label is `sign(x)`.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.iter().any(|&(x, _)| !((1.0..=2.0).contains(&x.abs()))) {
            return Err(invalid("inputs must lie in [-2,-1] or [1,2]"));
        }
        if points.iter().any(|&(_, w)| !(w.is_finite() && w > 0.0)) {
            return Err(invalid("weights must be positive"));
        }
        let total: f64 = points.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        if !points.iter().any(|p| p.0 > 0.0) || !points.iter().any(|p| p.0 < 0.0) {
            return Err(invalid("both classes need at least one point"));
        }
        Ok(Self { points: points.into_iter().map(|(x, w)| (x, w / total)).collect() })
    }

    /// `{−2, −1, 1, 2}` with weight ¼ each.
    pub fn standard() -> Self {
        Self::new(vec![(-2.0, 0.25), (-1.0, 0.25), (1.0, 0.25), (2.0, 0.25)]).expect("valid dataset")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn label(x: f64) -> f64 {
        x.signum()
    }

    /// Convex hull of the points with label `label`.
    fn hull(&self, label: f64) -> (f64, f64) {
        self.points
            .iter()
            .filter(|p| Self::label(p.0) == label)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)))
    }
}

fn hull_grid((lo, hi): (f64, f64)) -> impl Iterator<Item = f64> {
    (0..HULL_SAMPLES).map(move |i| lo + (hi - lo) * i as f64 / (HULL_SAMPLES - 1) as f64)
}

/// `Σ_x P(x) log(1 + exp(−2ξ_x f(x)))`.
pub fn logistic_risk(ensemble: &ParticleEnsemble, data: &MarginDataset) -> f64 {
    data.points
        .iter()
        .map(|&(x, w)| w * softplus(-2.0 * MarginDataset::label(x) * ensemble.eval(x)))
        .sum()
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Margin statistics of the path-norm-normalized classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginReport {
    /// `min_x ξ_x f(x) / ‖f‖_path` over the data points.
    pub normalized_margin: f64,
    pub path_norm: f64,
    /// max − min of the normalized classifier over the hull of the positive class.
    pub spread_positive: f64,
    /// Same for the negative class.
    pub spread_negative: f64,
    /// Least-squares best `b ∈ [0,1]` of `f_b` against the normalized classifier on both hulls.
    pub fitted_b: f64,
}

pub fn margin_report(ensemble: &ParticleEnsemble, data: &MarginDataset) -> Result<MarginReport> {
    let path_norm = ensemble.path_norm();
    if !(path_norm > 0.0) {
        return Err(invalid("ensemble has zero path norm"));
    }
    let h = |x: f64| ensemble.eval(x) / path_norm;
    let normalized_margin = data
        .points
        .iter()
        .map(|&(x, _)| MarginDataset::label(x) * h(x))
        .fold(f64::INFINITY, f64::min);
    let spread = |label: f64| {
        let (lo, hi) = hull_grid(data.hull(label))
            .map(h)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    };
    let samples: Vec<(f64, f64)> = hull_grid(data.hull(-1.0))
        .chain(hull_grid(data.hull(1.0)))
        .map(|x| (x, h(x)))
        .collect();
    Ok(MarginReport {
        normalized_margin,
        path_norm,
        spread_positive: spread(1.0),
        spread_negative: spread(-1.0),
        fitted_b: fit_b(&samples),
    })
}

/// Grid search for the `b ∈ [0,1]` minimizing `Σ (f_b(x) − y)²`.
fn fit_b(samples: &[(f64, f64)]) -> f64 {
    const STEPS: usize = 1000;
    (0..=STEPS)
        .map(|i| i as f64 / STEPS as f64)
        .map(|b| {
            let err: f64 = samples.iter().map(|&(x, y)| (f_b_unchecked(b, x) - y).powi(2)).sum();
            (b, err)
        })
        .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

fn f_b_unchecked(b: f64, x: f64) -> f64 {
    let scale = 1.0 / (2.0 * (1.0 + b));
    scale
        * if x > b {
            x + b
        } else if x < -b {
            x - b
        } else {
            2.0 * x
        }
}

/// Maximum-margin classifier
/// `f_b(x) = (x+b, 2x, x−b)/(2(1+b))` on `x > b`, `|x| < b`, `x < −b`.
pub fn f_b_classifier(b: f64, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&b) {
        return Err(invalid(format!("b must lie in [0, 1], got {b}")));
    }
    Ok(f_b_unchecked(b, x))
}

/// `f_b` as a two-particle mean-field ReLU ensemble with unit path norm:
/// `f_b(x) = ½[2c·relu(x+b) − 2c·relu(−x+b)]` with `c = 1/(2(1+b))`.
pub fn f_b_ensemble(b: f64) -> Result<ParticleEnsemble> {
    if !(0.0..=1.0).contains(&b) {
        return Err(invalid(format!("b must lie in [0, 1], got {b}")));
    }
    let a = 1.0 / (1.0 + b);
    ParticleEnsemble::new(vec![Particle { a, w: 1.0, b }, Particle { a: -a, w: -1.0, b }])
}

/// One trace row of [`train_mean_field_relu`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldRecord {
    pub t: f64,
    pub risk: f64,
    pub normalized_margin: f64,
    pub path_norm: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldRun {
    pub ensemble: ParticleEnsemble,
    pub trace: Vec<MeanFieldRecord>,
    pub steps: usize,
    /// Number of rejected (halved) Euler steps.
    pub halvings: usize,
}

/// Mean-field velocities `−m ∂R/∂θᵢ` and the network values at the data.
fn velocities(ens: &ParticleEnsemble, data: &MarginDataset) -> Vec<Particle> {
    // dR/df at each data point
    let dfs: Vec<(f64, f64)> = data
        .points
        .iter()
        .map(|&(x, w)| {
            let xi = MarginDataset::label(x);
            let u = 2.0 * xi * ens.eval(x);
            // d/df log(1+e^{−2ξf}) = −2ξ / (1 + e^{2ξf})
            let sig = if u > 0.0 { (-u).exp() / (1.0 + (-u).exp()) } else { 1.0 / (1.0 + u.exp()) };
            (x, -2.0 * xi * w * sig)
        })
        .collect();
    ens.particles
        .iter()
        .map(|p| {
            let mut v = Particle { a: 0.0, w: 0.0, b: 0.0 };
            for &(x, d) in &dfs {
                let z = p.w * x + p.b;
                if z > 0.0 {
                    v.a -= d * z;
                    v.w -= d * p.a * x;
                    v.b -= d * p.a;
                }
            }
            v
        })
        .collect()
}

fn snapshot(t: f64, ens: &ParticleEnsemble, data: &MarginDataset) -> MeanFieldRecord {
    let risk = logistic_risk(ens, data);
    match margin_report(ens, data) {
        Ok(r) => MeanFieldRecord {
            t,
            risk,
            normalized_margin: r.normalized_margin,
            path_norm: r.path_norm,
            spread: r.spread_positive,
        },
        Err(_) => MeanFieldRecord { t, risk, normalized_margin: 0.0, path_norm: 0.0, spread: 0.0 },
    }
}

/// Explicit-Euler particle gradient flow up to time `t_end`.
///
/// `dt` is the largest Euler step. Steps start at `dt/100` and grow by 10%
/// after every accepted step; a step that increases the risk is halved and
/// retried.
/// The trace is sampled at `t = 0`, log-spaced times, and `t_end`.
pub fn train_mean_field_relu(
    data: &MarginDataset,
    m: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<MeanFieldRun> {
    if m < 100 {
        return Err(invalid(format!("need at least 100 particles, got {m}")));
    }
    if !(t_end.is_finite() && t_end > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(invalid("final time and step must be positive"));
    }
    let mut ens = ParticleEnsemble::gaussian(m, seed)?;
    let mut risk = logistic_risk(&ens, data);
    let mut trace = vec![snapshot(0.0, &ens, data)];
    let mut next_record = dt;
    let mut t = 0.0;
    let mut h = dt * INITIAL_STEP_FRACTION;
    let (mut steps, mut halvings) = (0, 0);
    while t < t_end {
        let step = h.min(t_end - t);
        let v = velocities(&ens, data);
        let cand = ParticleEnsemble {
            particles: ens
                .particles
                .iter()
                .zip(&v)
                .map(|(p, v)| Particle { a: p.a + step * v.a, w: p.w + step * v.w, b: p.b + step * v.b })
                .collect(),
        };
        let cand_risk = logistic_risk(&cand, data);
        if !(cand_risk <= risk) {
            h *= 0.5;
            halvings += 1;
            if h < 1e-12 * dt {
                return Err(LabError::NumericFailure(format!("Euler step collapsed at t = {t}")));
            }
            continue;
        }
        ens = cand;
        risk = cand_risk;
        t += step;
        steps += 1;
        h = (STEP_GROWTH * h).min(dt);
        if t >= next_record || t >= t_end {
            trace.push(snapshot(t, &ens, data));
            while next_record <= t {
                next_record *= 10f64.powf(0.1);
            }
        }
    }
    Ok(MeanFieldRun { ensemble: ens, trace, steps, halvings })
}
