//! Three-neuron network `h(x) = a₁σ(−x) − a₂σ(x+1) + a₃σ(x)` on the data
//! `P = p₁δ₋₁ + p₂δ₀ + p₃δ₁` with labels `ξ₋₁ = ξ₁ = 1`, `ξ₀ = −1`, trained
//! by gradient flow of the exponential risk
//! `F(a) = p₁e^{−a₁} + p₂e^{−a₂} + p₃e^{a₂−a₃}`.
//!
//! With the simplified sigmoid every data argument sits on a flat piece of
//! the activation, so only the outer coefficients move. The gap
//! `h(t,1) − h(t,−1)` between the two points of the positive class tends to
//! `log(p₃/(2p₁))`, which vanishes only when `p₃ = 2p₁`.

use crate::error::{invalid, LabError, Result};

/// Data points of the three-neuron problem, in order `x = −1, 0, 1`.
pub const INPUTS: [f64; 3] = [-1.0, 0.0, 1.0];
/// Labels of [`INPUTS`].
pub const LABELS: [f64; 3] = [1.0, -1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeNeuronState {
    pub a: [f64; 3],
    pub p: [f64; 3],
    pub t: f64,
}

impl ThreeNeuronState {
    /// State at `t = 0`. Requires `p ≥ 0`, `Σp = 1` (to 1e−12) and `p₁, p₃ > 0`.
    pub fn new(a: [f64; 3], p: [f64; 3]) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("coefficients must be finite"));
        }
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!("weights must be nonnegative, got {p:?}")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        if p[0] == 0.0 || p[2] == 0.0 {
            return Err(invalid("p1 and p3 must be positive"));
        }
        Ok(Self { a, p, t: 0.0 })
    }

    /// Initial state on the invariant manifold `exp(2a₂ − a₃) = 2p₂/(3p₃)`.
    pub fn on_invariant_manifold(a1: f64, a2: f64, p: [f64; 3]) -> Result<Self> {
        if p[1] <= 0.0 {
            return Err(invalid("the invariant manifold needs p2 > 0"));
        }
        let a3 = (3.0 * p[2] / (2.0 * p[1])).ln() + 2.0 * a2;
        Self::new([a1, a2, a3], p)
    }

    /// `(h(−1), h(0), h(1)) = (a₁, −a₂, a₃ − a₂)`.
    pub fn outputs(&self) -> [f64; 3] {
        let [a1, a2, a3] = self.a;
        [a1, -a2, a3 - a2]
    }

    /// `h(t,1) − h(t,−1) = (a₃ − a₂) − a₁`.
    pub fn gap(&self) -> f64 {
        let [a1, a2, a3] = self.a;
        (a3 - a2) - a1
    }

    pub fn risk(&self) -> f64 {
        let [a1, a2, a3] = self.a;
        let [p1, p2, p3] = self.p;
        p1 * (-a1).exp() + p2 * (-a2).exp() + p3 * (a2 - a3).exp()
    }

    /// `exp(2a₂ − a₃)`, which relaxes to `2p₂/(3p₃)`.
    pub fn manifold_factor(&self) -> f64 {
        (2.0 * self.a[1] - self.a[2]).exp()
    }
}

/// Limit of the class gap, `log(p₃/(2p₁))`.
pub fn gap_limit(p: [f64; 3]) -> f64 {
    (p[2] / (2.0 * p[0])).ln()
}

/// `a₁(t) = log(e^{a₁(0)} + p₁t)`.
pub fn closed_form_a1(a1_0: f64, p1: f64, t: f64) -> f64 {
    (a1_0.exp() + p1 * t).ln()
}

/// `a₂(t) = log(e^{a₂(0)} + p₂t/3)` and `a₃ = log(3p₃/(2p₂)) + 2a₂`, valid
/// when started on the invariant manifold.
pub fn closed_form_manifold(a2_0: f64, p: [f64; 3], t: f64) -> (f64, f64) {
    let a2 = (a2_0.exp() + p[1] * t / 3.0).ln();
    (a2, (3.0 * p[2] / (2.0 * p[1])).ln() + 2.0 * a2)
}

/// Gradient-flow velocity `−∇F(a)`:
/// `(p₁e^{−a₁}, p₂e^{−a₂} − p₃e^{a₂−a₃}, p₃e^{a₂−a₃})`.
pub fn three_neuron_rhs(state: &ThreeNeuronState) -> Result<[f64; 3]> {
    rhs(state.a, state.p)
}

fn rhs(a: [f64; 3], p: [f64; 3]) -> Result<[f64; 3]> {
    let e1 = p[0] * (-a[0]).exp();
    let e2 = p[1] * (-a[1]).exp();
    let e3 = p[2] * (a[1] - a[2]).exp();
    let d = [e1, e2 - e3, e3];
    if d.iter().any(|v| !v.is_finite()) {
        return Err(LabError::NumericFailure(format!("three-neuron velocity overflowed at a = {a:?}")));
    }
    Ok(d)
}

fn rk4_step(state: &ThreeNeuronState, h: f64) -> Result<ThreeNeuronState> {
    let p = state.p;
    let a = state.a;
    let add = |x: [f64; 3], k: [f64; 3], s: f64| [x[0] + s * k[0], x[1] + s * k[1], x[2] + s * k[2]];
    let k1 = rhs(a, p)?;
    let k2 = rhs(add(a, k1, 0.5 * h), p)?;
    let k3 = rhs(add(a, k2, 0.5 * h), p)?;
    let k4 = rhs(add(a, k3, h), p)?;
    let mut next = a;
    for i in 0..3 {
        next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(ThreeNeuronState { a: next, p, t: state.t + h })
}

/// Step-size schedule for the RK4 integrator: the step at time `t` is
/// `max(dt, growth·t)`. `growth = 0` gives a fixed step.
///
/// The flow slows like `1/t`, so a step proportional to `t` keeps the
/// per-step error uniform and reaches `t = 10⁶` in a few thousand steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub dt: f64,
    pub growth: f64,
    pub checkpoints_per_decade: usize,
}

impl StepSchedule {
    pub fn fixed(dt: f64) -> Self {
        Self { dt, growth: 0.0, checkpoints_per_decade: 10 }
    }

    pub fn geometric(dt: f64, growth: f64) -> Self {
        Self { dt, growth, checkpoints_per_decade: 10 }
    }

    fn step_at(&self, t: f64) -> f64 {
        self.dt.max(self.growth * t)
    }
}

/// `0`, log-spaced times from `dt` (n per decade), then `t_end`.
fn checkpoints(dt: f64, t_end: f64, per_decade: usize) -> Vec<f64> {
    let n = per_decade.max(1) as f64;
    let mut times = vec![0.0];
    let mut e = (n * dt.log10()).ceil() as i64;
    loop {
        let t = 10f64.powf(e as f64 / n);
        if t >= t_end * (1.0 - 1e-12) {
            break;
        }
        if t > 0.0 {
            times.push(t);
        }
        e += 1;
    }
    times.push(t_end);
    times
}

/// Fixed-step RK4 trajectory from `state0` to `t_end`, sampled at
/// log-spaced checkpoints.
pub fn integrate_three_neuron(state0: &ThreeNeuronState, t_end: f64, dt: f64) -> Result<Vec<ThreeNeuronState>> {
    integrate_three_neuron_with(state0, t_end, &StepSchedule::fixed(dt))
}

pub fn integrate_three_neuron_with(
    state0: &ThreeNeuronState,
    t_end: f64,
    schedule: &StepSchedule,
) -> Result<Vec<ThreeNeuronState>> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(invalid(format!("final time must be positive, got {t_end}")));
    }
    if !(schedule.dt.is_finite() && schedule.dt > 0.0) {
        return Err(invalid(format!("time step must be positive, got {}", schedule.dt)));
    }
    if !(schedule.growth.is_finite() && schedule.growth >= 0.0) {
        return Err(invalid(format!("step growth must be nonnegative, got {}", schedule.growth)));
    }
    let start = ThreeNeuronState { t: 0.0, ..*state0 };
    let mut state = start;
    let mut out = Vec::new();
    for target in checkpoints(schedule.dt, t_end, schedule.checkpoints_per_decade) {
        while target - state.t > 1e-12 * target.max(1.0) {
            let h = schedule.step_at(state.t).min(target - state.t);
            state = rk4_step(&state, h)?;
        }
        state.t = target;
        out.push(state);
    }
    Ok(out)
}

/// `h(t,1) − h(t,−1)` along a trajectory.
pub fn class_gap(trajectory: &[ThreeNeuronState]) -> Result<Vec<f64>> {
    if trajectory.is_empty() {
        return Err(invalid("trajectory is empty"));
    }
    Ok(trajectory.iter().map(ThreeNeuronState::gap).collect())
}

/// Clamp ramp: 0 for `z ≤ 0`, `z` on `(0,1)`, 1 for `z ≥ 1`.
pub fn simplified_sigmoid(z: f64) -> f64 {
    z.clamp(0.0, 1.0)
}

/// Derivative of [`simplified_sigmoid`], taken as 0 at the kinks.
pub fn simplified_sigmoid_derivative(z: f64) -> f64 {
    if z > 0.0 && z < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Full parameterization `h(x) = Σ cᵢ σ(wᵢx + bᵢ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeNeuronNetwork {
    pub c: [f64; 3],
    pub w: [f64; 3],
    pub b: [f64; 3],
}

/// Gradient of the exponential risk with respect to every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkGradient {
    pub c: [f64; 3],
    pub w: [f64; 3],
    pub b: [f64; 3],
}

impl ThreeNeuronNetwork {
    /// The network `a₁σ(−x) − a₂σ(x+1) + a₃σ(x)`.
    pub fn from_coefficients(a: [f64; 3]) -> Self {
        Self { c: [a[0], -a[1], a[2]], w: [-1.0, 1.0, 1.0], b: [0.0, 1.0, 0.0] }
    }

    pub fn coefficients(&self) -> [f64; 3] {
        [self.c[0], -self.c[1], self.c[2]]
    }

    pub fn eval(&self, x: f64) -> f64 {
        (0..3).map(|i| self.c[i] * simplified_sigmoid(self.w[i] * x + self.b[i])).sum()
    }

    /// `∫ exp(−ξ_x h(x)) P(dx)`.
    pub fn risk(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|n| p[n] * (-LABELS[n] * self.eval(INPUTS[n])).exp()).sum()
    }

    pub fn risk_gradient(&self, p: [f64; 3]) -> NetworkGradient {
        let mut g = NetworkGradient { c: [0.0; 3], w: [0.0; 3], b: [0.0; 3] };
        for n in 0..3 {
            let (x, xi) = (INPUTS[n], LABELS[n]);
            // d/dh of p e^{−ξh}
            let dh = -xi * p[n] * (-xi * self.eval(x)).exp();
            for i in 0..3 {
                let z = self.w[i] * x + self.b[i];
                let ds = simplified_sigmoid_derivative(z);
                g.c[i] += dh * simplified_sigmoid(z);
                g.w[i] += dh * self.c[i] * ds * x;
                g.b[i] += dh * self.c[i] * ds;
            }
        }
        g
    }
}
