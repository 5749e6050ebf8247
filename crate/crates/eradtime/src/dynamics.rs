//! The controlled susceptible/infected flow and its fixed-step integrator.
//!
//! For a datum `(x, y, t0)` and control `alpha`, the state `(S, I)` evolves
//! in local time `s` as
//!
//! ```text
//! S'(s) = -beta(t0 + s) S I - alpha(s) S        S(0) = x
//! I'(s) =  beta(t0 + s) S I - gamma(t0 + s) I   I(0) = y
//! ```
//!
//! The integrator is classical fourth-order Runge-Kutta with steps aligned
//! to the control breakpoints, so the (piecewise-constant) control is
//! constant within every step. Within a segment the step is uniform with a
//! trailing partial step; extending the horizon therefore appends nodes
//! without moving existing ones.

use std::io::Write;

use crate::error::Error;
use crate::rates::{ControlSignal, RateSchedule};
use crate::Result;

/// Initial condition `(x, y)` at start time `t0` of the ambient clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Datum {
    pub x: f64,
    pub y: f64,
    pub t0: f64,
}

impl Datum {
    pub fn new(x: f64, y: f64, t0: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && t0.is_finite()) {
            return Err(Error::domain("datum components must be finite"));
        }
        if x < 0.0 || y < 0.0 || t0 < 0.0 {
            return Err(Error::domain(format!(
                "datum needs x >= 0, y >= 0, t0 >= 0; got ({x}, {y}, {t0})"
            )));
        }
        Ok(Datum { x, y, t0 })
    }
}

/// Right-hand side of the system at ambient time `t` under control value `a`.
#[inline]
pub fn derivative(rates: &RateSchedule, t: f64, x: f64, y: f64, a: f64) -> (f64, f64) {
    let (beta, gamma) = rates.rates_at(t);
    (-beta * x * y - a * x, (beta * x - gamma) * y)
}

/// Bound on the vector-field Jacobian (infinity norm) over
/// `[0, x_max] x [0, y_max]` with control values in `[0, 1]`.
pub fn lipschitz_bound(rates: &RateSchedule, x_max: f64, y_max: f64) -> f64 {
    rates.beta_hi() * (x_max + y_max) + rates.gamma_hi() + 1.0
}

/// Guaranteed lower envelope `i0 * exp(-gamma_hi * dt)`: the infected
/// fraction never decays faster than its worst-case recovery rate.
pub fn decay_floor(rates: &RateSchedule, i0: f64, dt: f64) -> f64 {
    i0 * (-rates.gamma_hi() * dt).exp()
}

/// Integrator options. `step = None` selects the default step
/// `0.1 / lipschitz_bound`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowOptions {
    pub step: Option<f64>,
}

/// A solved path: node times, states, and node derivatives, evaluable
/// between nodes by cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<(f64, f64)>,
    derivs: Vec<(f64, f64)>,
}

impl Trajectory {
    /// Assembles a path from explicit samples (times strictly ascending,
    /// one state and derivative per time). Useful for building synthetic
    /// paths with known closed forms.
    pub fn from_samples(
        times: Vec<f64>,
        states: Vec<(f64, f64)>,
        derivs: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() || times.len() != derivs.len() {
            return Err(Error::domain(
                "trajectory samples need matching nonempty times/states/derivs",
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("trajectory times must be strictly ascending"));
        }
        Ok(Trajectory { times, states, derivs })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[(f64, f64)] {
        &self.states
    }

    pub fn derivs(&self) -> &[(f64, f64)] {
        &self.derivs
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index of the node interval containing `s` (clamped to the last one).
    fn interval(&self, s: f64) -> usize {
        let k = self.times.partition_point(|&t| t <= s);
        k.saturating_sub(1).min(self.times.len().saturating_sub(2))
    }

    /// State at local time `s` in `[0, horizon]`.
    pub fn eval(&self, s: f64) -> Result<(f64, f64)> {
        Ok(self.eval_with_deriv(s)?.0)
    }

    /// State and time derivative at local time `s`.
    pub fn eval_with_deriv(&self, s: f64) -> Result<((f64, f64), (f64, f64))> {
        if !(0.0..=self.horizon()).contains(&s) {
            return Err(Error::domain(format!(
                "evaluation time {s} outside [0, {}]",
                self.horizon()
            )));
        }
        if self.times.len() == 1 {
            return Ok((self.states[0], self.derivs[0]));
        }
        let k = self.interval(s);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let th = (s - t0) / h;
        let (p0, p1) = (self.states[k], self.states[k + 1]);
        let (m0, m1) = (self.derivs[k], self.derivs[k + 1]);
        let th2 = th * th;
        let th3 = th2 * th;
        let (h00, h10, h01, h11) = (
            2.0 * th3 - 3.0 * th2 + 1.0,
            th3 - 2.0 * th2 + th,
            -2.0 * th3 + 3.0 * th2,
            th3 - th2,
        );
        let (d00, d10, d01, d11) = (
            (6.0 * th2 - 6.0 * th) / h,
            (3.0 * th2 - 4.0 * th + 1.0) / h,
            (-6.0 * th2 + 6.0 * th) / h,
            (3.0 * th2 - 2.0 * th) / h,
        );
        let val = |a: f64, b: f64, c: f64, d: f64, pick: fn((f64, f64)) -> f64| {
            a * pick(p0) + b * h * pick(m0) + c * pick(p1) + d * h * pick(m1)
        };
        let s_val = val(h00, h10, h01, h11, |p| p.0);
        let i_val = val(h00, h10, h01, h11, |p| p.1);
        let s_dot = val(d00, d10, d01, d11, |p| p.0);
        let i_dot = val(d00, d10, d01, d11, |p| p.1);
        Ok(((s_val, i_val), (s_dot, i_dot)))
    }

    /// Writes `s,S,I` rows with full float precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s,S,I")?;
        for (t, (s, i)) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t:.16e},{s:.16e},{i:.16e}")?;
        }
        Ok(())
    }
}

/// Integrates the flow for `datum` under `alpha` up to `horizon` with
/// default options.
pub fn flow(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    horizon: f64,
) -> Result<Trajectory> {
    flow_with(rates, alpha, datum, horizon, &FlowOptions::default())
}

/// Integrates the flow with explicit options.
///
/// The supplied step must satisfy `h * L <= 1` for the Lipschitz bound `L`
/// of the invariant box `[0, x] x [0, x + y]`; larger steps are rejected
/// with a suggested value rather than silently producing garbage.
pub fn flow_with(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    horizon: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::domain(format!("horizon must be finite and >= 0; got {horizon}")));
    }
    let local = rates.shift(datum.t0)?;
    let lip = lipschitz_bound(&local, datum.x, datum.x + datum.y);
    let h = match opts.step {
        Some(h) if !(h > 0.0) => {
            return Err(Error::domain(format!("step must be positive; got {h}")));
        }
        Some(h) if h * lip > 1.0 => {
            return Err(Error::StepTooLarge { h, bound: 1.0 / lip, suggested: 0.1 / lip });
        }
        Some(h) => h,
        None => 0.1 / lip,
    };

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut derivs = Vec::new();

    // Node layout: every control breakpoint in (0, horizon), filled with
    // uniform steps of h and a trailing partial step per segment.
    let mut seg_starts = vec![0.0];
    for &b in alpha.breakpoints() {
        if b > 0.0 && b < horizon {
            seg_starts.push(b);
        }
    }

    let push = |times: &mut Vec<f64>,
                states: &mut Vec<(f64, f64)>,
                derivs: &mut Vec<(f64, f64)>,
                t: f64,
                st: (f64, f64),
                a: f64| {
        times.push(t);
        states.push(st);
        derivs.push(derivative(&local, t, st.0, st.1, a));
    };

    let mut state = (datum.x, datum.y);
    push(&mut times, &mut states, &mut derivs, 0.0, state, alpha.eval(0.0));

    for (si, &seg_a) in seg_starts.iter().enumerate() {
        let seg_b = seg_starts.get(si + 1).copied().unwrap_or(horizon);
        let a = alpha.eval(seg_a);
        let mut t = seg_a;
        while t < seg_b {
            let step = h.min(seg_b - t);
            let prev = state;
            state = rk4_step(&local, t, state, step, a);
            // Clamp roundoff-scale negatives; anything larger is a real
            // integration failure.
            let tol = 1e-9 * (1.0 + prev.0 + prev.1);
            if state.0 < -tol || state.1 < -tol {
                return Err(Error::Integration(format!(
                    "state left the nonnegative quadrant at s = {}: ({}, {})",
                    t + step,
                    state.0,
                    state.1
                )));
            }
            state.0 = state.0.max(0.0);
            state.1 = state.1.max(0.0);
            if state.0 > prev.0 + tol || state.0 + state.1 > prev.0 + prev.1 + tol {
                return Err(Error::Integration(format!(
                    "monotonicity of S and S + I failed at s = {}",
                    t + step
                )));
            }
            t += step;
            // The control value on [seg_a, seg_b) also applies at seg_b
            // for the stored derivative only when no breakpoint sits there;
            // re-evaluate so Hermite slopes match the right-continuous alpha.
            let node_a = alpha.eval(t);
            push(&mut times, &mut states, &mut derivs, t, state, node_a);
        }
    }

    Ok(Trajectory { times, states, derivs })
}

/// One classical Runge-Kutta step of width `h` from `(t, state)` with the
/// control held at `a`.
#[inline]
pub(crate) fn rk4_step(
    rates: &RateSchedule,
    t: f64,
    state: (f64, f64),
    h: f64,
    a: f64,
) -> (f64, f64) {
    let f = |tt: f64, st: (f64, f64)| derivative(rates, tt, st.0, st.1, a);
    let k1 = f(t, state);
    let k2 = f(t + 0.5 * h, (state.0 + 0.5 * h * k1.0, state.1 + 0.5 * h * k1.1));
    let k3 = f(t + 0.5 * h, (state.0 + 0.5 * h * k2.0, state.1 + 0.5 * h * k2.1));
    let k4 = f(t + h, (state.0 + h * k3.0, state.1 + h * k3.1));
    (
        state.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        state.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}
