use std::collections::BTreeMap;

use collapse_lab::counterexamples::{
    f_b_classifier, f_b_ensemble, margin_report, three_neuron_rhs, MarginDataset, Particle, ParticleEnsemble,
    ThreeNeuronState,
};
use collapse_lab::final_layer::{collapse_to_means, project_lp_ball, ClassifierOutputs};
use collapse_lab::loss::{grad_phi, hess_phi, phi, softmax, LabeledPoint, LabeledPointSet, LogitVector};
use collapse_lab::metrics::collapse_report;
use collapse_lab::penultimate::{project_spectral, singular_values};
use collapse_lab::simplex::{lagrange_residual, lp_norm, simplex_lp};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn logits(max_k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, 2..=max_k)
}

fn lv(z: &[f64]) -> LogitVector {
    LogitVector::from_slice(z).unwrap()
}

/// Reference value `log Σ exp(z) − z_j`, summed in long form after shifting.
fn phi_oracle(j: usize, z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[j]
}

/// Labeled points with `1..=3` points per class and their outputs.
fn dataset() -> impl Strategy<Value = (Vec<LabeledPoint>, usize, Vec<Vec<f64>>)> {
    (2usize..=5)
        .prop_flat_map(|k| (Just(k), prop::collection::vec(1usize..=3, k)))
        .prop_flat_map(|(k, counts)| {
            let n: usize = counts.iter().sum();
            (
                Just(k),
                Just(counts),
                prop::collection::vec(0.05..1.0f64, n),
                prop::collection::vec(prop::collection::vec(-5.0..5.0f64, k), n),
            )
        })
        .prop_map(|(k, counts, weights, outputs)| {
            let total: f64 = weights.iter().sum();
            let mut points = Vec::new();
            for (class, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    let id = points.len();
                    points.push(LabeledPoint { id, class, weight: weights[id] / total });
                }
            }
            (points, k, outputs)
        })
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_is_shift_invariant(z in logits(12), c in -100.0..100.0f64) {
        let base = softmax(&lv(&z)).into_vector();
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let moved = softmax(&lv(&shifted)).into_vector();
        prop_assert!((moved - &base).amax() <= 1e-12);
        prop_assert!((base.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn phi_matches_reference_and_is_shift_invariant(z in logits(10), j in 0usize..10, c in -50.0..50.0f64) {
        let j = j % z.len();
        let value = phi(j, &lv(&z)).unwrap();
        prop_assert!(value >= 0.0);
        prop_assert!((value - phi_oracle(j, &z)).abs() <= 1e-12 * (1.0 + value));
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        prop_assert!((phi(j, &lv(&shifted)).unwrap() - value).abs() <= 1e-11 * (1.0 + value));
    }

    #[test]
    fn hessian_is_psd_with_ones_in_kernel(z in logits(12)) {
        let h = hess_phi(&lv(&z));
        let k = z.len();
        prop_assert!((&h - h.transpose()).amax() == 0.0);
        let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
        prop_assert!(min_eig >= -1e-12, "min eigenvalue {}", min_eig);
        prop_assert!((&h * DVector::from_element(k, 1.0)).amax() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences(z in prop::collection::vec(-5.0..5.0f64, 2..=8), j in 0usize..8) {
        let j = j % z.len();
        let g = grad_phi(j, &lv(&z)).unwrap();
        prop_assert!(g.sum().abs() <= 1e-12);
        let eps = 1e-5;
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += eps;
            zm[i] -= eps;
            let fd = (phi_oracle(j, &zp) - phi_oracle(j, &zm)) / (2.0 * eps);
            prop_assert!((fd - g[i]).abs() <= 1e-6, "coordinate {}: {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn collapsing_to_means_never_increases_risk((points, k, outputs) in dataset()) {
        let map: BTreeMap<usize, LogitVector> = points.iter().map(|p| (p.id, lv(&outputs[p.id]))).collect();
        let risk_of = |m: &BTreeMap<usize, LogitVector>| -> f64 {
            points.iter().map(|p| p.weight * phi_oracle(p.class, m[&p.id].as_slice())).sum()
        };
        let before = risk_of(&map);
        let h = ClassifierOutputs::new(LabeledPointSet::new(points.clone(), Some(k)).unwrap(), map).unwrap();
        let collapsed = collapse_to_means(&h).unwrap();
        prop_assert!(risk_of(collapsed.outputs()) <= before + 1e-14);
        // every point of a class shares one output
        for p in &points {
            let first = points.iter().find(|q| q.class == p.class).unwrap();
            prop_assert_eq!(collapsed.get(p.id), collapsed.get(first.id));
        }
    }

    #[test]
    fn lp_projection_is_the_nearest_feasible_point(
        z in prop::collection::vec(-4.0..4.0f64, 2..=6),
        w in prop::collection::vec(-1.0..1.0f64, 6),
        p in 1.2..5.0f64,
        radius in 0.2..3.0f64,
    ) {
        let proj = project_lp_ball(&lv(&z), radius, p).unwrap();
        let pz = proj.as_slice();
        prop_assert!(lp_norm(pz, p) <= radius * (1.0 + 1e-12));
        if lp_norm(&z, p) <= radius {
            prop_assert_eq!(pz, z.as_slice());
        }
        // variational inequality ⟨z − P z, w − P z⟩ ≤ 0 for a feasible w
        let w = &w[..z.len()];
        let wn = lp_norm(w, p);
        let w: Vec<f64> = if wn > radius { w.iter().map(|v| v * radius / wn).collect() } else { w.to_vec() };
        let inner: f64 = (0..z.len()).map(|i| (z[i] - pz[i]) * (w[i] - pz[i])).sum();
        prop_assert!(inner <= 1e-9, "inner product {}", inner);
    }

    #[test]
    fn spectral_projection_clips_singular_values(a in matrix(3, 5, 2.0), b in matrix(3, 5, 1.0)) {
        let pa = project_spectral(&a).unwrap();
        let sv = singular_values(&pa).unwrap();
        prop_assert!(sv[0] <= 1.0 + 1e-12);
        let original = singular_values(&a).unwrap();
        for (s, t) in original.iter().zip(&sv) {
            prop_assert!((s.min(1.0) - t).abs() <= 1e-9);
        }
        let b_sigma = singular_values(&b).unwrap()[0];
        let b = if b_sigma > 1.0 { b / b_sigma } else { b };
        prop_assert!((&a - &pa).norm() <= (&a - &b).norm() + 1e-12);
        prop_assert!((project_spectral(&pa).unwrap() - &pa).amax() <= 1e-12);
    }

    #[test]
    fn lp_simplex_vertex_is_stationary(k in 2usize..=12, p in 1.1..8.0f64, radius in 0.1..10.0f64) {
        let s = simplex_lp(k, radius, p).unwrap();
        for j in [0, k - 1] {
            let z = s.vertex(j).unwrap();
            prop_assert!((lp_norm(z.as_slice(), p) - radius).abs() <= 1e-12 * radius);
            let (lambda, residual) = lagrange_residual(j, &z, p).unwrap();
            prop_assert!(lambda < 0.0);
            prop_assert!(residual <= 1e-10);
        }
    }

    #[test]
    fn collapse_metrics_are_rotation_invariant(y in matrix(5, 12, 3.0), a in matrix(3, 5, 1.0), q in matrix(5, 5, 1.0)) {
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let q = q.qr().q();
        let base = collapse_report(&y, &labels, Some(&a)).unwrap();
        let rot = collapse_report(&(&q * &y), &labels, Some(&(&a * q.transpose()))).unwrap();
        prop_assert!((base.within_class_variance - rot.within_class_variance).abs() <= 1e-10);
        prop_assert!((base.equinorm_deviation - rot.equinorm_deviation).abs() <= 1e-10);
        prop_assert!((base.equiangular_deviation - rot.equiangular_deviation).abs() <= 1e-10);
        prop_assert!((base.self_duality_deviation.unwrap() - rot.self_duality_deviation.unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn every_f_b_has_margin_one_half(b in 0.0..=1.0f64) {
        let margin = [-2.0, -1.0, 1.0, 2.0f64]
            .iter()
            .map(|&x| x.signum() * f_b_classifier(b, x).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((margin - 0.5).abs() <= 1e-15);
        let r = margin_report(&f_b_ensemble(b).unwrap(), &MarginDataset::standard()).unwrap();
        prop_assert!((r.normalized_margin - 0.5).abs() <= 1e-12);
        prop_assert!((r.path_norm - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn margin_report_ignores_outer_scale(
        params in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 3..20),
        lambda in 0.01..100.0f64,
    ) {
        let ens = ParticleEnsemble::new(params.iter().map(|&(a, w, b)| Particle { a, w, b }).collect()).unwrap();
        prop_assume!(ens.path_norm() > 1e-6);
        let data = MarginDataset::standard();
        let r0 = margin_report(&ens, &data).unwrap();
        let r1 = margin_report(&ens.scale_outer(lambda), &data).unwrap();
        prop_assert!((r0.normalized_margin - r1.normalized_margin).abs() <= 1e-12);
        prop_assert!((r0.spread_positive - r1.spread_positive).abs() <= 1e-12);
        prop_assert!((r1.path_norm - lambda * r0.path_norm).abs() <= 1e-9 * r1.path_norm);
    }

    #[test]
    fn three_neuron_rhs_matches_formula(a in prop::array::uniform3(-5.0..5.0f64), u in 0.05..0.9f64, v in 0.0..1.0f64) {
        let p1 = u * 0.5;
        let p2 = (1.0 - p1) * v * 0.9;
        let p = [p1, p2, 1.0 - p1 - p2];
        let s = ThreeNeuronState::new(a, p).unwrap();
        let d = three_neuron_rhs(&s).unwrap();
        prop_assert!(d[0] > 0.0 && d[2] > 0.0);
        let expected = [
            p[0] * (-a[0]).exp(),
            p[1] * (-a[1]).exp() - p[2] * (a[1] - a[2]).exp(),
            p[2] * (a[1] - a[2]).exp(),
        ];
        for i in 0..3 {
            prop_assert!((d[i] - expected[i]).abs() <= 1e-12 * (1.0 + expected[i].abs()));
        }
    }
}
