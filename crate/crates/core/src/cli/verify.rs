//! Invariant suites behind `collapse-lab verify <suite>`.
//!
//! Every check compares one measured number against a tolerance; the
//! expected values come from closed forms, never from the solvers under
//! test.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::counterexamples::three_neuron::{closed_form_a1, closed_form_manifold};
use crate::counterexamples::{
    f_b_classifier, f_b_ensemble, gap_limit, integrate_three_neuron, integrate_three_neuron_with, margin_report,
    train_mean_field_relu, MarginDataset, StepSchedule, ThreeNeuronNetwork, ThreeNeuronState,
};
use crate::error::{invalid, Result};
use crate::final_layer::{collapse_to_means, solve_final_layer, ClassifierOutputs, SolverSettings};
use crate::loss::{grad_phi, hess_phi, phi, risk, softmax, LabeledPoint, LabeledPointSet, LogitVector};
use crate::metrics::{collapse_report, CollapseReport};
use crate::penultimate::{check_isometry, optimize_penultimate, PenultimateSettings};
use crate::simplex::{simplex_l2, simplex_lp};

/// Names accepted by [`run_suite`], in the order `all` runs them.
pub const SUITES: [&str; 6] = ["oracle", "hessian", "collapse", "penultimate", "ode", "margin"];

/// Admissible region for a measured value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `measured ≤ bound`.
    AtMost(f64),
    /// `measured ≥ bound`.
    AtLeast(f64),
    /// `lo ≤ measured ≤ hi`.
    Within(f64, f64),
}

impl Tolerance {
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Self::AtMost(b) => v <= b,
            Self::AtLeast(b) => v >= b,
            Self::Within(lo, hi) => lo <= v && v <= hi,
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::AtMost(b) => write!(f, "<= {b:e}"),
            Self::AtLeast(b) => write!(f, ">= {b:e}"),
            Self::Within(lo, hi) => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub tolerance: Tolerance,
    pub passed: bool,
}

impl Check {
    pub fn new(suite: &'static str, name: impl Into<String>, measured: f64, tolerance: Tolerance) -> Self {
        let passed = tolerance.admits(measured);
        Self { suite, name: name.into(), measured, tolerance, passed }
    }

    fn at_most(suite: &'static str, name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self::new(suite, name, measured, Tolerance::AtMost(bound))
    }

    /// A check whose computation failed.
    fn failed(suite: &'static str, name: impl Into<String>, tolerance: Tolerance, err: impl fmt::Display) -> Self {
        Self { suite, name: format!("{} ({err})", name.into()), measured: f64::NAN, tolerance, passed: false }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<11} {:<44} measured={:<12e} tol {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

/// Runs one suite, or every suite for `"all"`.
pub fn run_suite(name: &str) -> Result<Vec<Check>> {
    match name {
        "oracle" => Ok(oracle_suite()),
        "hessian" => Ok(hessian_suite()),
        "collapse" => Ok(collapse_suite()),
        "penultimate" => Ok(penultimate_suite()),
        "ode" => Ok(ode_suite()),
        "margin" => Ok(margin_suite()),
        "all" => Ok(SUITES.par_iter().flat_map(|s| run_suite(s).unwrap_or_default()).collect()),
        other => Err(invalid(format!("unknown suite \"{other}\"; expected one of {}, all", SUITES.join(", ")))),
    }
}

fn gaussian_vector(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(k, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

/// Final-layer solver against the closed-form ℓᵖ simplex:
/// `k ∈ 2..=11`, `p ∈ {1.5, 2, 3}`, `R ∈ {1, 5}`.
pub fn oracle_suite() -> Vec<Check> {
    const SUITE: &str = "oracle";
    let mut grid = Vec::new();
    for k in 2..=11usize {
        for p in [1.5, 2.0, 3.0] {
            for radius in [1.0, 5.0] {
                grid.push((k, p, radius));
            }
        }
    }
    grid.par_iter()
        .map(|&(k, p, radius)| {
            let name = format!("vertex k={k} p={p} R={radius}");
            let tol = Tolerance::AtMost(1e-5);
            let run = || -> Result<f64> {
                let exact = simplex_lp(k, radius, p)?;
                let ds = LabeledPointSet::one_point_per_class(&vec![1.0 / k as f64; k])?;
                let sol = solve_final_layer(&ds, &SolverSettings::with_ball(radius, p))?;
                let mut err: f64 = 0.0;
                for (j, z) in sol.vertices.iter().enumerate() {
                    err = err.max((z.as_vector() - exact.vertex(j)?.as_vector()).amax());
                }
                Ok(err)
            };
            match run() {
                Ok(err) => Check::new(SUITE, name, err, tol),
                Err(e) => Check::failed(SUITE, name, tol, e),
            }
        })
        .collect()
}

/// Hessian PSD and null direction, softmax shift invariance, and finite
/// differences of the gradient and Hessian.
pub fn hessian_suite() -> Vec<Check> {
    const SUITE: &str = "hessian";
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    for k in [2usize, 3, 5, 8, 12] {
        for trial in 0..2 {
            let z = gaussian_vector(k, 3.0, &mut rng);
            let lz = LogitVector::new(z.clone()).expect("finite logits");
            let tag = format!("k={k} #{trial}");
            let h = hess_phi(&lz);

            let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
            out.push(Check::at_most(SUITE, format!("psd {tag}"), (-min_eig).max(0.0), 1e-12));
            let null = (&h * DVector::from_element(k, 1.0)).amax();
            out.push(Check::at_most(SUITE, format!("null direction {tag}"), null, 1e-12));

            let base = softmax(&lz).into_vector();
            let shift = [-50.0, 3.7, 100.0]
                .iter()
                .map(|&c| {
                    let zs = LogitVector::new(z.add_scalar(c)).expect("finite logits");
                    (softmax(&zs).into_vector() - &base).amax()
                })
                .fold(0.0, f64::max);
            out.push(Check::at_most(SUITE, format!("softmax shift {tag}"), shift, 1e-12));

            let j = trial % k;
            let eps = 1e-5;
            let g = grad_phi(j, &lz).expect("valid class");
            let mut grad_err: f64 = 0.0;
            let mut hess_err: f64 = 0.0;
            for i in 0..k {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += eps;
                zm[i] -= eps;
                let (lp, lm) = (LogitVector::new(zp).unwrap(), LogitVector::new(zm).unwrap());
                let fd = (phi(j, &lp).unwrap() - phi(j, &lm).unwrap()) / (2.0 * eps);
                grad_err = grad_err.max((fd - g[i]).abs());
                let col = (grad_phi(j, &lp).unwrap() - grad_phi(j, &lm).unwrap()) / (2.0 * eps);
                hess_err = hess_err.max((col - h.column(i)).amax());
            }
            out.push(Check::at_most(SUITE, format!("gradient fd {tag}"), grad_err, 1e-6));
            out.push(Check::at_most(SUITE, format!("hessian fd {tag}"), hess_err, 1e-6));
        }
    }
    out
}

fn random_dataset(rng: &mut ChaCha8Rng) -> (LabeledPointSet, BTreeMap<usize, LogitVector>, usize) {
    let k = rng.random_range(2..=6);
    let mut points = Vec::new();
    for class in 0..k {
        for _ in 0..rng.random_range(1..=4) {
            let id = points.len();
            points.push(LabeledPoint { id, class, weight: rng.random_range(0.1..1.0) });
        }
    }
    let total: f64 = points.iter().map(|p| p.weight).sum();
    for p in &mut points {
        p.weight /= total;
    }
    let outputs = points
        .iter()
        .map(|p| (p.id, LogitVector::new(gaussian_vector(k, 3.0, rng)).expect("finite")))
        .collect();
    (LabeledPointSet::new(points, Some(k)).expect("valid dataset"), outputs, k)
}

fn report_distance(a: &CollapseReport, b: &CollapseReport) -> f64 {
    let mut d = (a.within_class_variance - b.within_class_variance)
        .abs()
        .max((a.equinorm_deviation - b.equinorm_deviation).abs())
        .max((a.equiangular_deviation - b.equiangular_deviation).abs());
    if let (Some(x), Some(y)) = (a.self_duality_deviation, b.self_duality_deviation) {
        d = d.max((x - y).abs());
    }
    d
}

/// Collapse-to-mean risk inequality and collapse-metric invariances.
pub fn collapse_suite() -> Vec<Check> {
    const SUITE: &str = "collapse";
    let mut out = Vec::new();

    // Jensen: replacing outputs by class means never increases the risk.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let (ds, outputs, _) = random_dataset(&mut rng);
        let h = ClassifierOutputs::new(ds, outputs).expect("complete outputs");
        let collapsed = collapse_to_means(&h).expect("non-empty classes");
        worst = worst.max(collapsed.risk() - h.risk());
    }
    // Datasets whose classes are all singletons collapse to themselves; allow
    // for round-off in re-summing the risk.
    out.push(Check::at_most(SUITE, "collapse-to-mean, 1000 datasets", worst, 1e-14));

    // Deviations along (1,…,1) leave every Φ_j unchanged.
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (ds, mut outputs, _) = random_dataset(&mut rng);
        let members = ds.members();
        for class_members in &members {
            let anchor = outputs[&class_members[0]].as_vector().clone();
            for &id in class_members {
                let shift: f64 = rng.random_range(-3.0..3.0);
                outputs.insert(id, LogitVector::new(anchor.add_scalar(shift)).unwrap());
            }
        }
        let before = risk(&ds, &outputs).unwrap();
        let h = ClassifierOutputs::new(ds, outputs).unwrap();
        let after = collapse_to_means(&h).unwrap().risk();
        worst = worst.max((after - before).abs());
    }
    out.push(Check::at_most(SUITE, "collapse-to-mean equality along ones", worst, 1e-12));

    // Exact simplex with the centering map as dual.
    for k in 2..=6usize {
        let s = simplex_l2(k, 1.0).unwrap();
        let cols: Vec<DVector<f64>> = s.vertices().into_iter().map(LogitVector::into_vector).collect();
        let y = DMatrix::from_columns(&cols);
        let a = DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64);
        let labels: Vec<usize> = (0..k).collect();
        let r = collapse_report(&y, &labels, Some(&a)).unwrap();
        let dev = r
            .equinorm_deviation
            .max(r.equiangular_deviation)
            .max(r.self_duality_deviation.unwrap())
            .max(r.within_class_variance);
        out.push(Check::at_most(SUITE, format!("exact simplex k={k}"), dev, 1e-12));
    }

    // Rotation and translation invariance.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..5 {
        let (dim, k, n) = (6, 4, 24);
        let y = DMatrix::from_fn(dim, n, |_, _| StandardNormal.sample(&mut rng));
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let a = DMatrix::from_fn(k, dim, |_, _| StandardNormal.sample(&mut rng));
        let q = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let shift = gaussian_vector(dim, 5.0, &mut rng);

        let base = collapse_report(&y, &labels, Some(&a)).unwrap();
        let rotated = collapse_report(&(&q * &y), &labels, Some(&(&a * q.transpose()))).unwrap();
        let mut moved = y.clone();
        for mut col in moved.column_iter_mut() {
            col += &shift;
        }
        let translated = collapse_report(&moved, &labels, Some(&a)).unwrap();
        out.push(Check::at_most(SUITE, format!("rotation invariance #{trial}"), report_distance(&base, &rotated), 1e-10));
        out.push(Check::at_most(
            SUITE,
            format!("translation invariance #{trial}"),
            report_distance(&base, &translated),
            1e-10,
        ));
    }
    out
}

/// Optimized features and map against the centered-simplex / isometry
/// characterization, `k ∈ {3,4,5}`, `m ∈ {k−1, 2k}`, `R ∈ {1,2}`.
pub fn penultimate_suite() -> Vec<Check> {
    const SUITE: &str = "penultimate";
    let mut grid = Vec::new();
    for k in 3..=5usize {
        for m in [k - 1, 2 * k] {
            for radius in [1.0, 2.0] {
                grid.push((k, m, radius));
            }
        }
    }
    grid.par_iter()
        .flat_map_iter(|&(k, m, radius)| {
            let tag = format!("k={k} m={m} R={radius}");
            let ds = LabeledPointSet::one_point_per_class(&vec![1.0 / k as f64; k]).unwrap();
            let settings = PenultimateSettings { record_every: usize::MAX, ..PenultimateSettings::default() };
            let run = match optimize_penultimate(&ds, m, radius, &settings) {
                Ok(run) => run,
                Err(e) => return vec![Check::failed(SUITE, format!("optimize {tag}"), Tolerance::AtMost(0.0), e)],
            };
            let iso = check_isometry(&run.state);
            let y = run.state.features();
            let target = 2.0 * k as f64 * radius * radius / (k as f64 - 1.0);
            let mut pairwise: f64 = 0.0;
            for i in 0..k {
                for j in (i + 1)..k {
                    pairwise = pairwise.max(((y.column(i) - y.column(j)).norm_squared() - target).abs());
                }
            }
            let labels: Vec<usize> = (0..k).collect();
            let r = collapse_report(y, &labels, Some(run.state.map())).unwrap();
            vec![
                Check::at_most(SUITE, format!("center {tag}"), iso.center_norm, 1e-3 * radius),
                Check::at_most(SUITE, format!("pairwise distance {tag}"), pairwise, 1e-3),
                Check::at_most(SUITE, format!("isometry {tag}"), iso.gram_deviation, 1e-3),
                Check::at_most(SUITE, format!("equinorm {tag}"), r.equinorm_deviation, 1e-3),
                Check::at_most(SUITE, format!("equiangular {tag}"), r.equiangular_deviation, 1e-3),
                Check::at_most(SUITE, format!("self-duality {tag}"), r.self_duality_deviation.unwrap(), 1e-3),
            ]
        })
        .collect()
}

/// `p` drawn uniformly from the simplex, conditioned on `p₁, p₃ ≥ 0.05`.
pub fn random_weight_triples(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let (lo, hi) = (u.min(v), u.max(v));
        let p = [lo, hi - lo, 1.0 - hi];
        if p[0] >= 0.05 && p[2] >= 0.05 {
            out.push(p);
        }
    }
    out
}

/// Three-neuron flow against its closed form and gap limit.
pub fn ode_suite() -> Vec<Check> {
    const SUITE: &str = "ode";
    let mut out = Vec::new();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);

    let s = ThreeNeuronState::new([0.0; 3], [0.25, 0.25, 0.5]).unwrap();
    let a1 = integrate_three_neuron(&s, 12.0, 1e-2).unwrap().last().unwrap().a[0];
    out.push(Check::at_most(SUITE, "a1(12) = log 4", rel(a1, 4f64.ln()), 1e-6));

    let p = [0.2, 0.3, 0.5];
    let s = ThreeNeuronState::on_invariant_manifold(0.4, 0.1, p).unwrap();
    let traj = integrate_three_neuron(&s, 100.0, 1e-2).unwrap();
    let mut worst: f64 = 0.0;
    for st in &traj {
        let (a2, a3) = closed_form_manifold(0.1, p, st.t);
        worst = worst.max(rel(st.a[0], closed_form_a1(0.4, p[0], st.t)));
        worst = worst.max(rel(st.a[1], a2)).max(rel(st.a[2], a3));
    }
    out.push(Check::at_most(SUITE, "closed form on invariant manifold", worst, 1e-6));

    let s = ThreeNeuronState::new([0.0; 3], p).unwrap();
    let traj = integrate_three_neuron_with(&s, 1e4, &StepSchedule::geometric(1e-2, 1e-2)).unwrap();
    let factor = traj.last().unwrap().manifold_factor();
    out.push(Check::at_most(SUITE, "manifold attraction at T=1e4", (factor - 2.0 * p[1] / (3.0 * p[2])).abs(), 1e-3));

    let net = ThreeNeuronNetwork::from_coefficients([0.3, -0.2, 0.7]);
    let g = net.risk_gradient(p);
    let inner = g.w.iter().chain(&g.b).fold(0.0f64, |m, v| m.max(v.abs()));
    out.push(Check::at_most(SUITE, "inner weights frozen", inner, 0.0));

    let schedule = StepSchedule::geometric(1e-2, 1e-2);
    let mut triples = vec![[0.25, 0.25, 0.5]];
    triples.extend(random_weight_triples(20, 7));
    let gaps: Vec<Check> = triples
        .par_iter()
        .map(|&p| {
            let name = format!("gap limit p=({:.3},{:.3},{:.3})", p[0], p[1], p[2]);
            let tol = Tolerance::AtMost(5e-3);
            let s = ThreeNeuronState::new([0.0; 3], p).unwrap();
            match integrate_three_neuron_with(&s, 1e6, &schedule) {
                Ok(traj) => Check::new(SUITE, name, (traj.last().unwrap().gap() - gap_limit(p)).abs(), tol),
                Err(e) => Check::failed(SUITE, name, tol, e),
            }
        })
        .collect();
    out.extend(gaps);
    out
}

/// The max-margin family and a trained mean-field ensemble.
pub fn margin_suite() -> Vec<Check> {
    const SUITE: &str = "margin";
    let mut out = Vec::new();
    let data = MarginDataset::standard();
    for b in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let margin = [-2.0, -1.0, 1.0, 2.0f64]
            .iter()
            .map(|&x| x.signum() * f_b_classifier(b, x).unwrap())
            .fold(f64::INFINITY, f64::min);
        out.push(Check::at_most(SUITE, format!("f_b margin b={b}"), (margin - 0.5).abs(), 0.0));
        let ens = margin_report(&f_b_ensemble(b).unwrap(), &data).unwrap();
        out.push(Check::at_most(
            SUITE,
            format!("f_b ensemble margin b={b}"),
            (ens.normalized_margin - 0.5).abs(),
            1e-12,
        ));
    }

    match train_mean_field_relu(&data, 500, 1e5, 10.0, 0) {
        Ok(run) => {
            let r = margin_report(&run.ensemble, &data).unwrap();
            out.push(Check::new(SUITE, "trained margin", r.normalized_margin, Tolerance::Within(0.45, 0.5 + 1e-9)));
            out.push(Check::new(SUITE, "trained spread on [1,2]", r.spread_positive, Tolerance::AtLeast(0.1)));
            let rises = run.trace.windows(2).map(|w| w[1].risk - w[0].risk).fold(f64::NEG_INFINITY, f64::max);
            out.push(Check::at_most(SUITE, "risk non-increasing", rises, 1e-12));
        }
        Err(e) => out.push(Check::failed(SUITE, "trained ensemble", Tolerance::Within(0.45, 0.5 + 1e-9), e)),
    }
    out
}
