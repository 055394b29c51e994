//! JSON experiment configurations.
//!
//! A config file is a flat JSON object whose `"experiment"` key selects the
//! kind and whose remaining keys are that kind's parameters. Two keys are
//! shared by every kind:
//!
//! - `"out"`: output directory (overridden by `--out`),
//! - `"grid"`: an object mapping parameter names to arrays of values; the
//!   experiment is run once per element of their Cartesian product. Cells
//!   are numbered with the keys in sorted order, the last key varying
//!   fastest.

use std::path::PathBuf;

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::counterexamples::{MarginDataset, ThreeNeuronState};
use crate::error::{invalid, LabError, Result};
use crate::final_layer::SolverSettings;
use crate::loss::LabeledPointSet;
use crate::penultimate::PenultimateSettings;

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn final_layer_max_iter() -> usize {
    SolverSettings::default().max_iter
}

fn final_layer_tol() -> f64 {
    SolverSettings::default().tol
}

fn penultimate_max_iter() -> usize {
    PenultimateSettings::default().max_iter
}

fn penultimate_tol() -> f64 {
    PenultimateSettings::default().tol
}

fn record_every() -> usize {
    1
}

fn ode_t_end() -> f64 {
    1e6
}

fn ode_dt() -> f64 {
    1e-2
}

fn ode_growth() -> f64 {
    1e-2
}

fn particles() -> usize {
    500
}

fn margin_t_end() -> f64 {
    1e5
}

fn margin_dt() -> f64 {
    10.0
}

/// Final layer: per-class minimizers of `Φ_j` on the ℓᵖ ball of radius `R`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalLayerConfig {
    pub k: usize,
    #[serde(rename = "R", alias = "radius", default = "one")]
    pub radius: f64,
    #[serde(default = "two")]
    pub p: f64,
    /// Class weights; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub step: f64,
    #[serde(default = "final_layer_max_iter")]
    pub max_iter: usize,
    #[serde(default = "final_layer_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FinalLayerConfig {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            step: self.step,
            max_iter: self.max_iter,
            tol: self.tol,
            radius: self.radius,
            p: self.p,
            seed: self.seed,
        }
    }

    pub fn dataset(&self) -> Result<LabeledPointSet> {
        class_weights(self.k, self.weights.as_deref())
    }
}

/// Penultimate layer: joint optimization of features and a spectrally
/// constrained map.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenultimateConfig {
    pub k: usize,
    pub m: usize,
    #[serde(rename = "R", alias = "radius", default = "one")]
    pub radius: f64,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub feature_step: f64,
    #[serde(default = "one")]
    pub map_step: f64,
    #[serde(default = "penultimate_max_iter")]
    pub max_iter: usize,
    #[serde(default = "penultimate_tol")]
    pub tol: f64,
    #[serde(default = "record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PenultimateConfig {
    pub fn settings(&self) -> PenultimateSettings {
        PenultimateSettings {
            feature_step: self.feature_step,
            map_step: self.map_step,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            record_every: self.record_every,
        }
    }

    pub fn dataset(&self) -> Result<LabeledPointSet> {
        class_weights(self.k, self.weights.as_deref())
    }
}

/// Three-neuron gradient flow.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    /// Data weights `(p₁, p₂, p₃)` of the points `−1, 0, 1`.
    pub p: [f64; 3],
    /// Initial coefficients `(a₁, a₂, a₃)`.
    #[serde(default)]
    pub a0: [f64; 3],
    #[serde(rename = "T", alias = "t_end", default = "ode_t_end")]
    pub t_end: f64,
    /// Smallest RK4 step.
    #[serde(default = "ode_dt")]
    pub dt: f64,
    /// The step at time `t` is `max(dt, growth·t)`; 0 gives a fixed step.
    #[serde(default = "ode_growth")]
    pub growth: f64,
    #[serde(default)]
    pub seed: u64,
}

impl OdeConfig {
    pub fn initial_state(&self) -> Result<ThreeNeuronState> {
        ThreeNeuronState::new(self.a0, self.p)
    }
}

/// Mean-field ReLU max-margin experiment.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    #[serde(default = "particles")]
    pub particles: usize,
    #[serde(rename = "T", alias = "t_end", default = "margin_t_end")]
    pub t_end: f64,
    /// Largest Euler step.
    #[serde(default = "margin_dt")]
    pub dt: f64,
    /// Data as `[x, weight]` pairs; `{−2, −1, 1, 2}` with weight ¼ when absent.
    #[serde(default)]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub seed: u64,
}

impl MarginConfig {
    pub fn dataset(&self) -> Result<MarginDataset> {
        match &self.points {
            None => Ok(MarginDataset::standard()),
            Some(pts) => MarginDataset::new(pts.iter().map(|&[x, w]| (x, w)).collect()),
        }
    }
}

/// Collapse metrics of explicitly listed features.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// One feature vector per point.
    pub features: Vec<Vec<f64>>,
    /// Class label of each point, in `0..k`.
    pub labels: Vec<usize>,
    /// Optional `k × dim` last-layer map, one row per class.
    #[serde(default)]
    pub map: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
}

/// One experiment, tagged by `"experiment"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    FinalLayer(FinalLayerConfig),
    Penultimate(PenultimateConfig),
    Ode(OdeConfig),
    Margin(MarginConfig),
    Metrics(MetricsConfig),
}

fn class_weights(k: usize, weights: Option<&[f64]>) -> Result<LabeledPointSet> {
    if k < 2 {
        return Err(invalid(format!("need at least two classes, got k = {k}")));
    }
    match weights {
        None => LabeledPointSet::one_point_per_class(&vec![1.0 / k as f64; k]),
        Some(w) if w.len() != k => Err(invalid(format!("{} weights for k = {k} classes", w.len()))),
        Some(w) => LabeledPointSet::one_point_per_class(w),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

pub(crate) fn dense_rows(rows: &[Vec<f64>], what: &str) -> Result<nalgebra::DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(invalid(format!("{what} must be a non-empty list of non-empty vectors")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(format!("{what} rows have different lengths")));
    }
    Ok(nalgebra::DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::FinalLayer(_) => "final-layer",
            Self::Penultimate(_) => "penultimate",
            Self::Ode(_) => "ode",
            Self::Margin(_) => "margin",
            Self::Metrics(_) => "metrics",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::FinalLayer(c) => c.seed,
            Self::Penultimate(c) => c.seed,
            Self::Ode(c) => c.seed,
            Self::Margin(c) => c.seed,
            Self::Metrics(c) => c.seed,
        }
    }

    /// Checks the parameters against the preconditions of the target module.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FinalLayer(c) => {
                c.dataset()?;
                c.settings().validate()
            }
            Self::Penultimate(c) => {
                c.dataset()?;
                positive("R", c.radius)?;
                if c.m + 1 < c.k {
                    return Err(invalid(format!("m = {} must be at least k − 1 = {}", c.m, c.k - 1)));
                }
                c.settings().validate()
            }
            Self::Ode(c) => {
                c.initial_state()?;
                positive("T", c.t_end)?;
                positive("dt", c.dt)?;
                if !(c.growth.is_finite() && c.growth >= 0.0) {
                    return Err(invalid(format!("growth must be nonnegative, got {}", c.growth)));
                }
                Ok(())
            }
            Self::Margin(c) => {
                c.dataset()?;
                positive("T", c.t_end)?;
                positive("dt", c.dt)?;
                if c.particles < 100 {
                    return Err(invalid(format!("need at least 100 particles, got {}", c.particles)));
                }
                Ok(())
            }
            Self::Metrics(c) => {
                let features = dense_rows(&c.features, "features")?;
                if c.labels.len() != features.nrows() {
                    return Err(invalid(format!(
                        "{} labels for {} feature vectors",
                        c.labels.len(),
                        features.nrows()
                    )));
                }
                if let Some(map) = &c.map {
                    dense_rows(map, "map")?;
                }
                Ok(())
            }
        }
    }
}

/// A parsed config file: one or more experiment cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub out: Option<PathBuf>,
    /// `(overrides, config)` per grid cell; a single cell with empty
    /// overrides when the file has no grid.
    pub cells: Vec<(Map<String, Value>, ExperimentConfig)>,
    pub is_grid: bool,
}

fn config_error(msg: impl std::fmt::Display) -> LabError {
    invalid(format!("config: {msg}"))
}

/// Parses and validates a config document. Every grid cell is validated
/// before anything runs.
pub fn parse_config(text: &str) -> Result<RunPlan> {
    let value: Value = serde_json::from_str(text).map_err(config_error)?;
    let Value::Object(mut base) = value else {
        return Err(config_error("top level must be a JSON object"));
    };
    let out = match base.remove("out") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => return Err(config_error(format!("\"out\" must be a string, got {other}"))),
    };
    let grid = match base.remove("grid") {
        None => None,
        Some(Value::Object(g)) => Some(g),
        Some(other) => return Err(config_error(format!("\"grid\" must be an object, got {other}"))),
    };

    let is_grid = grid.is_some();
    let mut overrides = vec![Map::new()];
    if let Some(grid) = grid {
        for (key, values) in grid {
            if key == "experiment" || key == "out" || key == "grid" {
                return Err(config_error(format!("\"{key}\" cannot be varied in a grid")));
            }
            let Value::Array(values) = values else {
                return Err(config_error(format!("grid entry \"{key}\" must be an array")));
            };
            if values.is_empty() {
                return Err(config_error(format!("grid entry \"{key}\" is empty")));
            }
            let mut expanded = Vec::with_capacity(overrides.len() * values.len());
            for cell in &overrides {
                for v in &values {
                    let mut cell = cell.clone();
                    cell.insert(key.clone(), v.clone());
                    expanded.push(cell);
                }
            }
            overrides = expanded;
        }
    }

    let mut cells = Vec::with_capacity(overrides.len());
    for (idx, cell) in overrides.into_iter().enumerate() {
        let mut merged = base.clone();
        merged.extend(cell.clone());
        let config: ExperimentConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| {
            if is_grid {
                config_error(format!("cell {idx}: {e}"))
            } else {
                config_error(e)
            }
        })?;
        config.validate().map_err(|e| if is_grid { invalid(format!("cell {idx}: {e}")) } else { e })?;
        cells.push((cell, config));
    }
    Ok(RunPlan { out, cells, is_grid })
}
