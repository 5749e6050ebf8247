//! Time-varying rates `beta(t)`, `gamma(t)` and piecewise-constant
//! vaccination controls, including the time-shift operators used when a
//! flow starts at `t0 > 0`.
//!
//! A [`RateSchedule`] carries certified bounds `beta_lo <= beta(t) <=
//! beta_hi`, `gamma_lo <= gamma(t) <= gamma_hi`; construction verifies them
//! by dense sampling. All schedule kinds are continuous in `t`: the
//! piecewise-constant and frozen-after kinds insert a linear ramp of
//! configurable width at each nominal jump.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Default ramp width (time units) used to smooth nominal jumps.
pub const DEFAULT_RAMP: f64 = 1e-3;

/// Number of sample points used by the construction-time bounds check.
pub const BOUNDS_SAMPLES: usize = 10_000;

/// Horizon over which the bounds check samples.
pub const BOUNDS_HORIZON: f64 = 100.0;

/// Quadrature samples per window in the growth-envelope bound.
const ENVELOPE_SAMPLES: usize = 4096;

/// Parameters of one sinusoidal component `base + amp * sin(freq*t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub base: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Sinusoid {
    fn eval(&self, t: f64) -> f64 {
        self.base + self.amp * (self.freq * t + self.phase).sin()
    }
}

/// The shape of a rate schedule. Evaluation yields `(beta, gamma)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateKind {
    Constant {
        beta: f64,
        gamma: f64,
    },
    /// Nominal step function smoothed by linear ramps of width `ramp`
    /// starting at each breakpoint. `betas`/`gammas` hold one value per
    /// segment (breakpoint count + 1).
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        betas: Vec<f64>,
        gammas: Vec<f64>,
        ramp: f64,
    },
    Sinusoidal {
        beta: Sinusoid,
        gamma: Sinusoid,
    },
    /// Equal to `base` before `t_freeze - ramp`, constant `(beta0, gamma0)`
    /// from `t_freeze` on, linear blend in between.
    FrozenAfter {
        base: Box<RateKind>,
        t_freeze: f64,
        beta0: f64,
        gamma0: f64,
        ramp: f64,
    },
    /// Evaluates `base` at `t + offset`; produced by [`RateSchedule::shift`].
    Shifted {
        base: Box<RateKind>,
        offset: f64,
    },
}

impl RateKind {
    fn eval(&self, t: f64) -> (f64, f64) {
        match self {
            RateKind::Constant { beta, gamma } => (*beta, *gamma),
            RateKind::PiecewiseConstant { breakpoints, betas, gammas, ramp } => {
                let j = breakpoints.partition_point(|&b| b <= t);
                if j == 0 {
                    (betas[0], gammas[0])
                } else {
                    let b = breakpoints[j - 1];
                    if t < b + ramp {
                        let th = (t - b) / ramp;
                        (
                            betas[j - 1] + th * (betas[j] - betas[j - 1]),
                            gammas[j - 1] + th * (gammas[j] - gammas[j - 1]),
                        )
                    } else {
                        (betas[j], gammas[j])
                    }
                }
            }
            RateKind::Sinusoidal { beta, gamma } => (beta.eval(t), gamma.eval(t)),
            RateKind::FrozenAfter { base, t_freeze, beta0, gamma0, ramp } => {
                if t >= *t_freeze {
                    (*beta0, *gamma0)
                } else if t <= t_freeze - ramp {
                    base.eval(t)
                } else {
                    let (bb, gb) = base.eval(t_freeze - ramp);
                    let th = (t - (t_freeze - ramp)) / ramp;
                    (bb + th * (beta0 - bb), gb + th * (gamma0 - gb))
                }
            }
            RateKind::Shifted { base, offset } => base.eval(t + offset),
        }
    }

    /// Earliest time after which evaluation is constant, if one exists.
    fn frozen_after(&self) -> Option<f64> {
        match self {
            RateKind::Constant { .. } => Some(0.0),
            RateKind::PiecewiseConstant { breakpoints, ramp, .. } => {
                Some(breakpoints.last().map_or(0.0, |b| b + ramp))
            }
            RateKind::Sinusoidal { beta, gamma } => {
                if beta.amp == 0.0 && gamma.amp == 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            RateKind::FrozenAfter { t_freeze, .. } => Some(*t_freeze),
            RateKind::Shifted { base, offset } => {
                base.frozen_after().map(|tf| (tf - offset).max(0.0))
            }
        }
    }
}

/// A continuous rate pair with certified bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    kind: RateKind,
    beta_lo: f64,
    beta_hi: f64,
    gamma_lo: f64,
    gamma_hi: f64,
}

impl RateSchedule {
    /// Builds a schedule and certifies the supplied bounds by sampling
    /// [`BOUNDS_SAMPLES`] points on `[0, BOUNDS_HORIZON]`.
    pub fn new(
        kind: RateKind,
        beta_lo: f64,
        beta_hi: f64,
        gamma_lo: f64,
        gamma_hi: f64,
    ) -> Result<Self> {
        if !(beta_lo > 0.0 && beta_lo <= beta_hi && gamma_lo > 0.0 && gamma_lo <= gamma_hi) {
            return Err(Error::Schedule(format!(
                "bounds must satisfy 0 < lo <= hi; got beta [{beta_lo}, {beta_hi}], gamma [{gamma_lo}, {gamma_hi}]"
            )));
        }
        validate_kind(&kind)?;
        let sch = RateSchedule { kind, beta_lo, beta_hi, gamma_lo, gamma_hi };
        // Jump-free kinds are exactly representable between samples, so a
        // dense sweep is an adequate certificate at desk scale.
        let slack = 1e-12;
        for i in 0..=BOUNDS_SAMPLES {
            let t = BOUNDS_HORIZON * i as f64 / BOUNDS_SAMPLES as f64;
            let (b, g) = sch.kind.eval(t);
            if b < beta_lo - slack || b > beta_hi + slack {
                return Err(Error::Schedule(format!(
                    "beta({t}) = {b} outside certified [{beta_lo}, {beta_hi}]"
                )));
            }
            if g < gamma_lo - slack || g > gamma_hi + slack {
                return Err(Error::Schedule(format!(
                    "gamma({t}) = {g} outside certified [{gamma_lo}, {gamma_hi}]"
                )));
            }
        }
        Ok(sch)
    }

    /// Constant rates with tight bounds.
    pub fn constant(beta: f64, gamma: f64) -> Result<Self> {
        RateSchedule::new(RateKind::Constant { beta, gamma }, beta, beta, gamma, gamma)
    }

    /// Checked evaluation; rejects negative times.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if t < 0.0 {
            return Err(Error::domain(format!("rate evaluation at negative t = {t}")));
        }
        Ok(self.rates_at(t))
    }

    /// Evaluation on the valid domain; hot path for the integrators.
    #[inline]
    pub fn rates_at(&self, t: f64) -> (f64, f64) {
        debug_assert!(t >= 0.0, "rates_at called with t = {t}");
        self.kind.eval(t)
    }

    /// The schedule `s -> (beta(s + t0), gamma(s + t0))` with the same bounds.
    pub fn shift(&self, t0: f64) -> Result<Self> {
        if t0 < 0.0 {
            return Err(Error::domain(format!("shift by negative t0 = {t0}")));
        }
        if t0 == 0.0 {
            return Ok(self.clone());
        }
        // Collapse nested shifts so repeated shifting composes exactly.
        let kind = match &self.kind {
            RateKind::Shifted { base, offset } => {
                RateKind::Shifted { base: base.clone(), offset: offset + t0 }
            }
            other => RateKind::Shifted { base: Box::new(other.clone()), offset: t0 },
        };
        Ok(RateSchedule { kind, ..self.clone() })
    }

    pub fn beta_lo(&self) -> f64 {
        self.beta_lo
    }
    pub fn beta_hi(&self) -> f64 {
        self.beta_hi
    }
    pub fn gamma_lo(&self) -> f64 {
        self.gamma_lo
    }
    pub fn gamma_hi(&self) -> f64 {
        self.gamma_hi
    }

    /// Lower end `gamma_lo / beta_hi` of the band where `I'` can vanish.
    pub fn x_lo(&self) -> f64 {
        self.gamma_lo / self.beta_hi
    }

    /// Upper end `gamma_hi / beta_lo` of the band where `I'` can vanish.
    pub fn x_hi(&self) -> f64 {
        self.gamma_hi / self.beta_lo
    }

    /// Earliest time after which the rates are constant, if any.
    pub fn frozen_after(&self) -> Option<f64> {
        self.kind.frozen_after()
    }

    /// The constant rates attained past [`Self::frozen_after`].
    pub fn frozen_values(&self) -> Option<(f64, f64)> {
        self.frozen_after().map(|tf| self.kind.eval(tf))
    }

    pub fn kind(&self) -> &RateKind {
        &self.kind
    }

    /// Upper bound on `sup over tau >= t` of the running integral of
    /// `m - gamma(s)` from `t` to `tau` (zero at `tau = t`), or infinity
    /// when the integral can drift upward without bound.
    ///
    /// This is a growth envelope: any flow with `beta(s) S(s) <= m` for
    /// all `s >= t` satisfies `I(tau) <= I(t) * exp(sup)`. The sampled
    /// quadrature is padded so the returned value never undershoots.
    pub fn gamma_envelope_sup(&self, t: f64, m: f64) -> f64 {
        envelope_sup(&self.kind, t, m)
    }
}

/// Supremum contributed by a constant-`gamma` tail: zero when the cap `m`
/// cannot outpace recovery, unbounded otherwise.
fn tail_sup(m: f64, gamma: f64) -> f64 {
    if m <= gamma {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Padded running maximum of the integral of `m - gamma(s)` over `[t, end]`
/// by trapezoid quadrature. The pad covers both the truncation error and
/// excursions between sample points, so the result is an upper bound.
fn sampled_sup(gamma: impl Fn(f64) -> f64, t: f64, end: f64, m: f64) -> f64 {
    if end <= t {
        return 0.0;
    }
    let h = (end - t) / ENVELOPE_SAMPLES as f64;
    let mut run = 0.0f64;
    let mut best = 0.0f64;
    let mut g_prev = gamma(t);
    let mut g_max = g_prev;
    for i in 1..=ENVELOPE_SAMPLES {
        let g = gamma(t + i as f64 * h);
        run += h * (m - 0.5 * (g_prev + g));
        g_prev = g;
        g_max = g_max.max(g);
        best = best.max(run);
    }
    best + 2.0 * h * (m.abs() + g_max) + 1e-12
}

fn envelope_sup(kind: &RateKind, t: f64, m: f64) -> f64 {
    match kind {
        RateKind::Constant { gamma, .. } => tail_sup(m, *gamma),
        RateKind::Sinusoidal { gamma, .. } => {
            if gamma.amp == 0.0 {
                return tail_sup(m, gamma.base);
            }
            // A strictly negative drift per period is required; the
            // running integral then peaks within the first period.
            if m >= gamma.base {
                return f64::INFINITY;
            }
            let period = std::f64::consts::TAU / gamma.freq.abs();
            sampled_sup(|s| gamma.eval(s), t, t + period, m)
        }
        RateKind::PiecewiseConstant { breakpoints, gammas, ramp, .. } => {
            let tail_start = breakpoints.last().map_or(0.0, |b| b + ramp);
            let tail = tail_sup(m, *gammas.last().expect("validated: segment values"));
            if t >= tail_start {
                tail
            } else if tail.is_infinite() {
                f64::INFINITY
            } else {
                // Past tail_start the integrand is nonpositive, so the
                // head's running maximum dominates the whole half-line.
                sampled_sup(|s| kind.eval(s).1, t, tail_start, m)
            }
        }
        RateKind::FrozenAfter { t_freeze, gamma0, .. } => {
            let tail = tail_sup(m, *gamma0);
            if t >= *t_freeze {
                tail
            } else if tail.is_infinite() {
                f64::INFINITY
            } else {
                sampled_sup(|s| kind.eval(s).1, t, *t_freeze, m)
            }
        }
        RateKind::Shifted { base, offset } => envelope_sup(base, t + offset, m),
    }
}

fn validate_kind(kind: &RateKind) -> Result<()> {
    match kind {
        RateKind::Constant { beta, gamma } => {
            if *beta <= 0.0 || *gamma <= 0.0 {
                return Err(Error::Schedule("constant rates must be positive".into()));
            }
        }
        RateKind::PiecewiseConstant { breakpoints, betas, gammas, ramp } => {
            if betas.len() != breakpoints.len() + 1 || gammas.len() != breakpoints.len() + 1 {
                return Err(Error::Schedule(
                    "piecewise-constant needs one value per segment (breakpoints + 1)".into(),
                ));
            }
            if *ramp <= 0.0 {
                return Err(Error::Schedule(
                    "ramp width must be positive to keep the schedule continuous".into(),
                ));
            }
            let mut prev = f64::NEG_INFINITY;
            for &b in breakpoints {
                if b < 0.0 || b - prev <= *ramp {
                    return Err(Error::Schedule(format!(
                        "breakpoints must be nonnegative and separated by more than the ramp width {ramp}"
                    )));
                }
                prev = b;
            }
        }
        RateKind::Sinusoidal { beta, gamma } => {
            for s in [beta, gamma] {
                if s.base - s.amp.abs() <= 0.0 {
                    return Err(Error::Schedule(
                        "sinusoidal component must stay positive (base > |amp|)".into(),
                    ));
                }
            }
        }
        RateKind::FrozenAfter { base, t_freeze, beta0, gamma0, ramp } => {
            if *t_freeze <= 0.0 || *ramp <= 0.0 || *ramp >= *t_freeze {
                return Err(Error::Schedule(
                    "frozen-after needs 0 < ramp < t_freeze".into(),
                ));
            }
            if *beta0 <= 0.0 || *gamma0 <= 0.0 {
                return Err(Error::Schedule("frozen rates must be positive".into()));
            }
            validate_kind(base)?;
        }
        RateKind::Shifted { base, offset } => {
            if *offset < 0.0 {
                return Err(Error::Schedule("shift offset must be nonnegative".into()));
            }
            validate_kind(base)?;
        }
    }
    Ok(())
}

/// A right-continuous step function with values in `[0, 1]`.
///
/// `values` has one entry per segment: `values[i]` applies on
/// `[breakpoints[i-1], breakpoints[i])` and the last entry is the tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl ControlSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::domain(format!(
                "control needs breakpoints + 1 values; got {} breakpoints, {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for &b in &breakpoints {
            if !(b >= 0.0 && b > prev) {
                return Err(Error::domain(
                    "control breakpoints must be nonnegative and strictly ascending",
                ));
            }
            prev = b;
        }
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("control value {v} outside [0, 1]")));
            }
        }
        Ok(ControlSignal { breakpoints, values })
    }

    /// Sorts the breakpoints and drops zero-width segments, so callers may
    /// perturb a breakpoint past its neighbor without bookkeeping.
    pub fn new_sorting(mut breakpoints: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::domain(
                "control needs breakpoints + 1 values",
            ));
        }
        // Sorting the breakpoints alone re-delimits the segments while the
        // value sequence keeps its order.
        breakpoints.sort_by(|a, b| a.total_cmp(b));
        let mut i = 0;
        while i + 1 < breakpoints.len() {
            if breakpoints[i] == breakpoints[i + 1] {
                breakpoints.remove(i + 1);
                values.remove(i + 1);
            } else {
                i += 1;
            }
        }
        ControlSignal::new(breakpoints, values)
    }

    /// The constant control `alpha == v`.
    pub fn constant(v: f64) -> Self {
        ControlSignal { breakpoints: Vec::new(), values: vec![v] }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= s);
        self.values[idx]
    }

    /// The control `s -> alpha(s + t0)`; breakpoints at or before `t0` drop.
    pub fn shift(&self, t0: f64) -> Self {
        if t0 == 0.0 {
            return self.clone();
        }
        let idx = self.breakpoints.partition_point(|&b| b <= t0);
        ControlSignal {
            breakpoints: self.breakpoints[idx..].iter().map(|b| b - t0).collect(),
            values: self.values[idx..].to_vec(),
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Compact single-token rendering for report columns, e.g. `0|1.5>1|3>0`.
    pub fn digest(&self) -> String {
        let mut out = format!("{}", self.values[0]);
        for (b, v) in self.breakpoints.iter().zip(&self.values[1..]) {
            out.push_str(&format!("|{b:.6}>{v}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn sinusoidal_b() -> RateSchedule {
        // beta constant 0.4, gamma oscillating 0.3 + 0.2 sin t.
        RateSchedule::new(
            RateKind::Sinusoidal {
                beta: Sinusoid { base: 0.4, amp: 0.0, freq: 1.0, phase: 0.0 },
                gamma: Sinusoid { base: 0.3, amp: 0.2, freq: 1.0, phase: 0.0 },
            },
            0.4,
            0.4,
            0.1,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn constant_eval() {
        let sch = RateSchedule::constant(0.5, 0.2).unwrap();
        assert_eq!(sch.eval(3.7).unwrap(), (0.5, 0.2));
    }

    #[test]
    fn sinusoidal_eval() {
        let sch = sinusoidal_b();
        let (b, g) = sch.eval(FRAC_PI_2).unwrap();
        assert_eq!(b, 0.4);
        assert!((g - 0.5).abs() < 1e-12);
    }

    #[test]
    fn frozen_after_eval() {
        let base = RateKind::Sinusoidal {
            beta: Sinusoid { base: 0.4, amp: 0.0, freq: 1.0, phase: 0.0 },
            gamma: Sinusoid { base: 0.3, amp: 0.2, freq: 1.0, phase: 0.0 },
        };
        let sch = RateSchedule::new(
            RateKind::FrozenAfter {
                base: Box::new(base),
                t_freeze: 2.3026,
                beta0: 0.4,
                gamma0: 0.3,
                ramp: DEFAULT_RAMP,
            },
            0.4,
            0.4,
            0.1,
            0.5,
        )
        .unwrap();
        assert_eq!(sch.eval(5.0).unwrap(), (0.4, 0.3));
        // Before the ramp the base applies unchanged.
        let (_, g) = sch.eval(1.0).unwrap();
        assert!((g - (0.3 + 0.2 * 1.0f64.sin())).abs() < 1e-12);
        assert_eq!(sch.frozen_after(), Some(2.3026));
        assert_eq!(sch.frozen_values(), Some((0.4, 0.3)));
    }

    #[test]
    fn frozen_after_is_continuous_across_ramp() {
        let sch = RateSchedule::new(
            RateKind::FrozenAfter {
                base: Box::new(RateKind::Constant { beta: 0.4, gamma: 0.45 }),
                t_freeze: 2.0,
                beta0: 0.4,
                gamma0: 0.3,
                ramp: 1e-3,
            },
            0.4,
            0.4,
            0.1,
            0.5,
        )
        .unwrap();
        // The nominal 0.15 jump is spread over the 1e-3 ramp: sampling at
        // 1e-4 must never see more than a tenth of it at once.
        let mut prev = sch.eval(1.9980).unwrap().1;
        for i in 1..=40 {
            let t = 1.9980 + i as f64 * 1e-4;
            let g = sch.eval(t).unwrap().1;
            assert!((g - prev).abs() < 0.0151, "jump at t = {t}");
            prev = g;
        }
    }

    #[test]
    fn piecewise_constant_ramps() {
        let sch = RateSchedule::new(
            RateKind::PiecewiseConstant {
                breakpoints: vec![1.0],
                betas: vec![0.5, 0.3],
                gammas: vec![0.2, 0.2],
                ramp: 0.01,
            },
            0.3,
            0.5,
            0.2,
            0.2,
        )
        .unwrap();
        assert_eq!(sch.eval(0.5).unwrap().0, 0.5);
        assert!((sch.eval(1.005).unwrap().0 - 0.4).abs() < 1e-12);
        assert_eq!(sch.eval(2.0).unwrap().0, 0.3);
    }

    #[test]
    fn shift_identity_and_sinusoid() {
        let sch = sinusoidal_b();
        let zero = sch.shift(0.0).unwrap();
        let pi = sch.shift(PI).unwrap();
        for i in 0..100 {
            let t = 0.37 * i as f64;
            assert_eq!(zero.eval(t).unwrap(), sch.eval(t).unwrap());
            assert_eq!(pi.eval(t).unwrap(), sch.eval(t + PI).unwrap());
        }
        // gamma negated about its mean: 0.3 at t = 0, 0.1 at t = pi/2.
        assert!((pi.eval(0.0).unwrap().1 - 0.3).abs() < 1e-12);
        assert!((pi.eval(FRAC_PI_2).unwrap().1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn shift_composes() {
        let sch = sinusoidal_b();
        let ab = sch.shift(0.7).unwrap().shift(1.9).unwrap();
        let once = sch.shift(0.7 + 1.9).unwrap();
        for i in 0..100 {
            let t = 0.53 * i as f64;
            assert_eq!(ab.eval(t).unwrap(), once.eval(t).unwrap());
        }
    }

    #[test]
    fn constant_shift_invariant() {
        let sch = RateSchedule::constant(0.5, 0.2).unwrap();
        let sh = sch.shift(11.0).unwrap();
        for i in 0..100 {
            let t = 0.91 * i as f64;
            assert_eq!(sh.eval(t).unwrap(), sch.eval(t).unwrap());
        }
    }

    #[test]
    fn negative_time_rejected() {
        let sch = RateSchedule::constant(0.5, 0.2).unwrap();
        assert!(sch.eval(-1.0).is_err());
        assert!(sch.shift(-0.5).is_err());
    }

    #[test]
    fn bounds_certificate_rejects_bad_bounds() {
        let kind = RateKind::Sinusoidal {
            beta: Sinusoid { base: 0.4, amp: 0.0, freq: 1.0, phase: 0.0 },
            gamma: Sinusoid { base: 0.3, amp: 0.2, freq: 1.0, phase: 0.0 },
        };
        // Claimed gamma_hi = 0.4 is violated at t = pi/2.
        assert!(RateSchedule::new(kind, 0.4, 0.4, 0.1, 0.4).is_err());
    }

    #[test]
    fn shifted_frozen_after() {
        let base = RateKind::FrozenAfter {
            base: Box::new(RateKind::Constant { beta: 0.4, gamma: 0.35 }),
            t_freeze: 2.0,
            beta0: 0.4,
            gamma0: 0.3,
            ramp: DEFAULT_RAMP,
        };
        let sch = RateSchedule::new(base, 0.4, 0.4, 0.1, 0.5).unwrap();
        assert_eq!(sch.shift(0.5).unwrap().frozen_after(), Some(1.5));
        assert_eq!(sch.shift(3.0).unwrap().frozen_after(), Some(0.0));
    }

    #[test]
    fn control_eval_and_right_continuity() {
        let alpha = ControlSignal::new(vec![2.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(alpha.eval(2.0), 1.0);
        assert_eq!(alpha.eval(1.999), 0.0);
        let alpha = ControlSignal::new(vec![1.0, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(alpha.eval(2.5), 1.0);
        assert_eq!(ControlSignal::constant(1.0).eval(7.0), 1.0);
    }

    #[test]
    fn control_shift() {
        let alpha = ControlSignal::new(vec![1.0, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        let sh = alpha.shift(2.0);
        assert_eq!(sh.breakpoints(), &[1.0]);
        assert_eq!(sh.values(), &[1.0, 0.0]);
        for i in 0..60 {
            let s = 0.1 * i as f64;
            assert_eq!(sh.eval(s), alpha.eval(s + 2.0));
        }
        assert_eq!(ControlSignal::constant(0.0).shift(5.0), ControlSignal::constant(0.0));
        assert_eq!(alpha.shift(0.0), alpha);
    }

    #[test]
    fn control_sorting_constructor() {
        // A breakpoint pushed past its neighbor still yields a valid signal.
        let c = ControlSignal::new_sorting(vec![3.5, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.breakpoints(), &[3.0, 3.5]);
        assert_eq!(c.eval(3.2), 1.0);
        let dup = ControlSignal::new_sorting(vec![2.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(dup.breakpoints(), &[2.0]);
    }

    #[test]
    fn control_rejects_bad_input() {
        assert!(ControlSignal::new(vec![2.0, 1.0], vec![0.0, 1.0, 0.0]).is_err());
        assert!(ControlSignal::new(vec![1.0], vec![0.0, 1.5]).is_err());
        assert!(ControlSignal::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn envelope_constant_rates() {
        let sch = RateSchedule::constant(0.5, 0.2).unwrap();
        assert_eq!(sch.gamma_envelope_sup(0.0, 0.2), 0.0);
        assert_eq!(sch.gamma_envelope_sup(3.0, 0.1), 0.0);
        assert!(sch.gamma_envelope_sup(0.0, 0.2 + 1e-9).is_infinite());
    }

    #[test]
    fn envelope_sinusoidal_matches_analytic_sup() {
        // gamma = 0.3 + 0.2 sin t starting at its minimum phase t = 3pi/2
        // against m = 0.2: the running integral is -0.1 tau + 0.2 sin tau,
        // peaking at tau = pi/3 with value 0.2 sin(pi/3) - 0.1 pi/3.
        let sch = sinusoidal_b();
        let t = 1.5 * PI;
        let exact = 0.2 * (PI / 3.0).sin() - 0.1 * PI / 3.0;
        let e = sch.gamma_envelope_sup(t, 0.2);
        assert!(e >= exact, "envelope {e} must not undershoot {exact}");
        assert!(e <= exact + 0.01, "envelope {e} too loose vs {exact}");
        // At the maximum-recovery phase the integral never goes positive.
        let flat = sch.gamma_envelope_sup(0.0, 0.2);
        assert!(flat >= 0.0 && flat <= 0.01);
        // No negative drift, no certificate.
        assert!(sch.gamma_envelope_sup(0.0, 0.3).is_infinite());
    }

    #[test]
    fn envelope_respects_shift_and_freeze() {
        let sch = sinusoidal_b();
        let t = 1.5 * PI;
        let shifted = sch.shift(t).unwrap();
        assert_eq!(shifted.gamma_envelope_sup(0.0, 0.2), sch.gamma_envelope_sup(t, 0.2));

        let frozen = RateSchedule::new(
            RateKind::FrozenAfter {
                base: Box::new(sch.kind().clone()),
                t_freeze: 2.0,
                beta0: 0.4,
                gamma0: 0.3,
                ramp: 1e-3,
            },
            0.4,
            0.4,
            0.1,
            0.5,
        )
        .unwrap();
        // Past the freeze the tail is constant 0.3.
        assert_eq!(frozen.gamma_envelope_sup(2.5, 0.25), 0.0);
        assert!(frozen.gamma_envelope_sup(2.5, 0.35).is_infinite());
        // Before the freeze: finite head quadrature, nonnegative by definition.
        let head = frozen.gamma_envelope_sup(0.0, 0.25);
        assert!(head.is_finite() && head >= 0.0);
    }
}
