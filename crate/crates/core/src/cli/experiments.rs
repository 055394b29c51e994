//! Dispatch of a validated config to the solvers, producing the rows of
//! `results.csv`, the entries of `report.json` and the plotted trace.
//!
//! CSV columns per experiment kind:
//!
//! | kind          | columns                                                              |
//! |---------------|----------------------------------------------------------------------|
//! | `final-layer` | `class,iteration,objective,residual,step`                            |
//! | `penultimate` | `iteration,risk,gram_deviation,isometry_residual,residual`           |
//! | `ode`         | `t,a1,a2,a3,gap`                                                     |
//! | `margin`      | `t,risk,normalized_margin,path_norm,spread`                          |
//! | `metrics`     | `class,count,centered_norm,max_cosine_deviation,self_duality`        |

use crate::cli::config::{
    dense_rows, ExperimentConfig, FinalLayerConfig, MarginConfig, MetricsConfig, OdeConfig, PenultimateConfig,
};
use crate::cli::svg::{Chart, Series};
use crate::counterexamples::{
    class_gap, integrate_three_neuron_with, margin_report, train_mean_field_relu, StepSchedule,
};
use crate::counterexamples::three_neuron::{closed_form_a1, gap_limit};
use crate::error::Result;
use crate::final_layer::minimize_phi_on_ball;
use crate::loss::phi_raw;
use crate::metrics::collapse_report;
use crate::penultimate::{check_isometry, optimize_penultimate};
use crate::simplex::{lagrange_residual, lp_norm, simplex_lp};

/// One CSV cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
    Empty,
}

/// Everything an experiment writes.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
    /// Flat report; the seed is appended by the writer.
    pub report: Vec<(String, f64)>,
    pub chart: Chart,
}

pub const FINAL_LAYER_COLUMNS: &[&str] = &["class", "iteration", "objective", "residual", "step"];
pub const PENULTIMATE_COLUMNS: &[&str] = &["iteration", "risk", "gram_deviation", "isometry_residual", "residual"];
pub const ODE_COLUMNS: &[&str] = &["t", "a1", "a2", "a3", "gap"];
pub const MARGIN_COLUMNS: &[&str] = &["t", "risk", "normalized_margin", "path_norm", "spread"];
pub const METRICS_COLUMNS: &[&str] = &["class", "count", "centered_norm", "max_cosine_deviation", "self_duality"];

pub fn run_experiment(config: &ExperimentConfig) -> Result<Artifacts> {
    match config {
        ExperimentConfig::FinalLayer(c) => final_layer(c),
        ExperimentConfig::Penultimate(c) => penultimate(c),
        ExperimentConfig::Ode(c) => ode(c),
        ExperimentConfig::Margin(c) => margin(c),
        ExperimentConfig::Metrics(c) => metrics(c),
    }
}

fn entry(name: &str, value: f64) -> (String, f64) {
    (name.to_string(), value)
}

fn final_layer(c: &FinalLayerConfig) -> Result<Artifacts> {
    let settings = c.settings();
    let dataset = c.dataset()?;
    let weights = dataset.class_weights();
    let exact = simplex_lp(c.k, c.radius, c.p)?;

    let mut rows = Vec::new();
    let mut residual_trace = Vec::new();
    let mut risk = 0.0;
    let mut vertex_error: f64 = 0.0;
    let mut constraint: f64 = 0.0;
    let mut stationarity: f64 = 0.0;
    let mut iterations = 0;
    let mut vertex0 = Vec::new();
    for j in 0..c.k {
        let sol = minimize_phi_on_ball(j, c.k, &settings)?;
        for r in &sol.trace {
            rows.push(vec![
                Cell::Int(j as u64),
                Cell::Int(r.iteration as u64),
                Cell::Real(r.objective),
                Cell::Real(r.residual),
                Cell::Real(r.step),
            ]);
            if j == 0 {
                residual_trace.push((r.iteration as f64, r.residual));
            }
        }
        let z = sol.z.as_slice();
        risk += weights[j] * phi_raw(j, z);
        let target = exact.vertex(j)?;
        let err = z.iter().zip(target.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        vertex_error = vertex_error.max(err);
        constraint = constraint.max((lp_norm(z, c.p) - c.radius).abs());
        stationarity = stationarity.max(lagrange_residual(j, &sol.z, c.p)?.1);
        iterations = iterations.max(sol.iterations);
        if j == 0 {
            vertex0 = z.to_vec();
        }
    }
    let alpha = vertex0[0];
    let beta = vertex0[1..].iter().sum::<f64>() / (c.k - 1) as f64;

    let report = vec![
        entry("alpha", alpha),
        entry("beta", beta),
        entry("alpha_exact", exact.alpha()),
        entry("beta_exact", exact.beta()),
        entry("max_vertex_error", vertex_error),
        entry("constraint_residual", constraint),
        entry("stationarity_residual", stationarity),
        entry("risk", risk),
        entry("iterations", iterations as f64),
        entry("k", c.k as f64),
        entry("R", c.radius),
        entry("p", c.p),
    ];
    let chart = Chart {
        title: format!("final layer, k = {}, p = {}, R = {} (class 0)", c.k, c.p, c.radius),
        x_label: "iteration".into(),
        y_label: "projected-gradient residual".into(),
        log_x: false,
        log_y: true,
        series: vec![Series::line("residual", residual_trace)],
    };
    Ok(Artifacts { columns: FINAL_LAYER_COLUMNS, rows, report, chart })
}

fn penultimate(c: &PenultimateConfig) -> Result<Artifacts> {
    let dataset = c.dataset()?;
    let run = optimize_penultimate(&dataset, c.m, c.radius, &c.settings())?;
    let rows = run
        .trace
        .iter()
        .map(|r| {
            vec![
                Cell::Int(r.iteration as u64),
                Cell::Real(r.risk),
                Cell::Real(r.gram_deviation),
                Cell::Real(r.isometry_residual),
                Cell::Real(r.residual),
            ]
        })
        .collect();
    let iso = check_isometry(&run.state);
    let y = run.state.features();
    let k = c.k;
    let target = 2.0 * k as f64 * c.radius * c.radius / (k as f64 - 1.0);
    let mut pairwise: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            pairwise = pairwise.max(((y.column(i) - y.column(j)).norm_squared() - target).abs());
        }
    }
    let labels: Vec<usize> = (0..k).collect();
    let collapse = collapse_report(y, &labels, Some(run.state.map()))?;

    let mut report = vec![
        entry("risk", run.risk),
        entry("oracle_risk", run.oracle_risk),
        entry("iterations", run.iterations as f64),
        entry("residual", run.residual),
        entry("center_norm", iso.center_norm),
        entry("radius_deviation", iso.radius_deviation),
        entry("isometry_deviation", iso.gram_deviation),
        entry("pairwise_distance_sq_deviation", pairwise),
    ];
    report.extend(collapse.scalar_fields().into_iter().map(|(n, v)| entry(n, v)));
    report.extend([entry("k", k as f64), entry("m", c.m as f64), entry("R", c.radius)]);

    let chart = Chart {
        title: format!("penultimate layer, k = {k}, m = {}, R = {}", c.m, c.radius),
        x_label: "iteration".into(),
        y_label: "risk".into(),
        log_x: false,
        log_y: false,
        series: vec![
            Series::line("risk", run.trace.iter().map(|r| (r.iteration as f64, r.risk)).collect()),
            Series::reference(
                "simplex optimum",
                vec![(0.0, run.oracle_risk), (run.iterations.max(1) as f64, run.oracle_risk)],
            ),
        ],
    };
    Ok(Artifacts { columns: PENULTIMATE_COLUMNS, rows, report, chart })
}

fn ode(c: &OdeConfig) -> Result<Artifacts> {
    let s0 = c.initial_state()?;
    let schedule = StepSchedule::geometric(c.dt, c.growth);
    let traj = integrate_three_neuron_with(&s0, c.t_end, &schedule)?;
    let gaps = class_gap(&traj)?;
    let rows = traj
        .iter()
        .zip(&gaps)
        .map(|(s, g)| vec![Cell::Real(s.t), Cell::Real(s.a[0]), Cell::Real(s.a[1]), Cell::Real(s.a[2]), Cell::Real(*g)])
        .collect();
    let last = traj.last().expect("trajectory is non-empty");
    let limit = gap_limit(c.p);
    let gap_final = *gaps.last().expect("trajectory is non-empty");
    let mut report = vec![
        entry("gap_final", gap_final),
        entry("gap_limit", limit),
        entry("gap_error", (gap_final - limit).abs()),
        entry("a1_final", last.a[0]),
        entry("a2_final", last.a[1]),
        entry("a3_final", last.a[2]),
        entry("a1_closed_form", closed_form_a1(c.a0[0], c.p[0], last.t)),
        entry("risk_final", last.risk()),
        entry("T", last.t),
    ];
    if c.p[1] > 0.0 {
        report.push(entry("manifold_factor_final", last.manifold_factor()));
        report.push(entry("manifold_factor_limit", 2.0 * c.p[1] / (3.0 * c.p[2])));
    }
    let chart = Chart {
        title: format!("three-neuron class gap, p = ({}, {}, {})", c.p[0], c.p[1], c.p[2]),
        x_label: "t".into(),
        y_label: "h(t,1) − h(t,−1)".into(),
        log_x: true,
        log_y: false,
        series: vec![
            Series::line("gap", traj.iter().zip(&gaps).filter(|(s, _)| s.t > 0.0).map(|(s, g)| (s.t, *g)).collect()),
            Series::reference("log(p3/(2 p1))", vec![(traj[1.min(traj.len() - 1)].t, limit), (last.t, limit)]),
        ],
    };
    Ok(Artifacts { columns: ODE_COLUMNS, rows, report, chart })
}

fn margin(c: &MarginConfig) -> Result<Artifacts> {
    let data = c.dataset()?;
    let run = train_mean_field_relu(&data, c.particles, c.t_end, c.dt, c.seed)?;
    let rows = run
        .trace
        .iter()
        .map(|r| {
            vec![
                Cell::Real(r.t),
                Cell::Real(r.risk),
                Cell::Real(r.normalized_margin),
                Cell::Real(r.path_norm),
                Cell::Real(r.spread),
            ]
        })
        .collect();
    let m = margin_report(&run.ensemble, &data)?;
    let last = run.trace.last().expect("trace is non-empty");
    let report = vec![
        entry("normalized_margin", m.normalized_margin),
        entry("path_norm", m.path_norm),
        entry("spread_positive", m.spread_positive),
        entry("spread_negative", m.spread_negative),
        entry("fitted_b", m.fitted_b),
        entry("risk_final", last.risk),
        entry("steps", run.steps as f64),
        entry("halvings", run.halvings as f64),
        entry("particles", c.particles as f64),
        entry("T", last.t),
    ];
    let t_first = run.trace.iter().find(|r| r.t > 0.0).map_or(c.dt, |r| r.t);
    let chart = Chart {
        title: format!("mean-field ReLU, {} particles", c.particles),
        x_label: "t".into(),
        y_label: "normalized margin".into(),
        log_x: true,
        log_y: false,
        series: vec![
            Series::line(
                "normalized margin",
                run.trace.iter().filter(|r| r.t > 0.0).map(|r| (r.t, r.normalized_margin)).collect(),
            ),
            Series::reference("max margin 1/2", vec![(t_first, 0.5), (last.t, 0.5)]),
        ],
    };
    Ok(Artifacts { columns: MARGIN_COLUMNS, rows, report, chart })
}

fn metrics(c: &MetricsConfig) -> Result<Artifacts> {
    let features = dense_rows(&c.features, "features")?.transpose();
    let map = c.map.as_ref().map(|m| dense_rows(m, "map")).transpose()?;
    let r = collapse_report(&features, &c.labels, map.as_ref())?;
    let k = r.k();
    let mut counts = vec![0u64; k];
    for &l in &c.labels {
        counts[l] += 1;
    }
    let centered: Vec<_> = r.class_means.column_iter().map(|col| col - &r.center).collect();
    let cos = |u: &nalgebra::DVector<f64>, v: &nalgebra::DVector<f64>| {
        let d = u.norm() * v.norm();
        if d == 0.0 { 0.0 } else { u.dot(v) / d }
    };
    let target = -1.0 / (k as f64 - 1.0);
    let rows = (0..k)
        .map(|i| {
            let cos_dev = (0..k)
                .filter(|&j| j != i)
                .map(|j| (cos(&centered[i], &centered[j]) - target).abs())
                .fold(0.0, f64::max);
            let duality = match &map {
                Some(a) => Cell::Real(1.0 - cos(&a.row(i).transpose(), &centered[i]).abs()),
                None => Cell::Empty,
            };
            vec![Cell::Int(i as u64), Cell::Int(counts[i]), Cell::Real(centered[i].norm()), Cell::Real(cos_dev), duality]
        })
        .collect();
    let mut report: Vec<(String, f64)> = r.scalar_fields().into_iter().map(|(n, v)| entry(n, v)).collect();
    report.extend([
        entry("k", k as f64),
        entry("points", c.labels.len() as f64),
        entry("dim", features.nrows() as f64),
    ]);
    let chart = Chart {
        title: "centered class-mean norms".into(),
        x_label: "class".into(),
        y_label: "‖y_i − M‖".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::line(
            "norm",
            centered.iter().enumerate().map(|(i, v)| (i as f64, v.norm())).collect(),
        )],
    };
    Ok(Artifacts { columns: METRICS_COLUMNS, rows, report, chart })
}
