//! Eradication times of a solved path relative to a threshold `mu`.
//!
//! The upper time is the last instant the infected fraction sits at or
//! above `mu` (the path may dip under `mu` and resurge while the
//! susceptible pool is still rich enough). The lower time is the first
//! entry into a sub-`mu` era, i.e. the first downward crossing. Both are
//! computed from threshold crossings of the dense trajectory.
//!
//! Certification: once `S < gamma_lo / beta_hi` and `I <= mu`, the
//! infected derivative `(beta S - gamma) I` is negative forever after, so
//! no further crossing can occur and a finite integration horizon suffices.
//! Weakly forced schedules need a second, phase-aware certificate: a flow
//! can stall with `S` inside the band while `I` decays through recurring
//! small bumps. Since `S` never increases, `beta(tau) S(tau)` stays under
//! `m = beta_hi * S(t)` for `tau >= t`, and
//! `I(tau) <= I(t) * exp(sup int (m - gamma))`; when that envelope stays
//! at or below `mu` the node certifies even though `S` never leaves the
//! band.

use std::io::Write;

use serde::Serialize;

use crate::dynamics::{flow, Datum, Trajectory};
use crate::error::Error;
use crate::rates::{ControlSignal, RateSchedule};
use crate::Result;

/// Relative tolerance on `|I - mu| / mu` at reported crossing times.
pub const TOL_CROSS_REL: f64 = 1e-10;

/// Relative factor for the tangency test: a touch requires
/// `|I'| <= TOUCH_DERIV_REL * gamma_hi * mu`.
pub const TOUCH_DERIV_REL: f64 = 1e-8;

/// Hard cap on the certification horizon search.
pub const HORIZON_CAP: f64 = 1e4;

/// Direction of a threshold crossing of `I - mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingKind {
    /// `I` falls through `mu`.
    Down,
    /// `I` rises through `mu`.
    Up,
}

/// One crossing event. Tangential touches are reported as two events at
/// equal times (down then up when touching from above).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub s: f64,
    pub kind: CrossingKind,
}

/// Crossing inventory plus the derived eradication times.
#[derive(Debug, Clone, Serialize)]
pub struct CrossingReport {
    pub mu: f64,
    pub certified_horizon: f64,
    pub crossings: Vec<Crossing>,
    /// Last downward crossing; 0 when the path never reaches `mu`.
    pub upper_time: f64,
    /// First downward crossing; 0 when the path never reaches `mu`.
    pub lower_time: f64,
    /// `I'` at the upper time (at `I'(0)` when there are no crossings).
    /// A strict gap between the two times with `I` confined below `mu`
    /// in between can only happen at a tangency, where this vanishes.
    pub derivative_at_upper: f64,
}

impl CrossingReport {
    /// Writes `s,direction` rows with full float precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "s,direction")?;
        for c in &self.crossings {
            let dir = match c.kind {
                CrossingKind::Down => "down",
                CrossingKind::Up => "up",
            };
            writeln!(w, "{:.16e},{dir}", c.s)?;
        }
        Ok(())
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::domain(format!("threshold mu must be finite and positive; got {mu}")));
    }
    Ok(())
}

/// Finds a time at which the path is certifiably past its last crossing:
/// either `S < gamma_lo / beta_hi` and `I <= mu` both hold, or the growth
/// envelope `I * exp(sup int (beta_hi S - gamma))` is at or below `mu`.
/// Searches by doubling the integration horizon, failing after
/// [`HORIZON_CAP`].
pub fn certified_horizon(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    mu: f64,
) -> Result<f64> {
    Ok(certified_trajectory(rates, alpha, datum, mu)?.1)
}

/// Integration reaching certification, returning the path and the first
/// certified node time.
pub(crate) fn certified_trajectory(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    mu: f64,
) -> Result<(Trajectory, f64)> {
    check_mu(mu)?;
    let x_lo = rates.x_lo();
    let beta_hi = rates.beta_hi();
    let shifted = rates.shift(datum.t0)?;
    let mut horizon = 64.0;
    loop {
        let traj = flow(rates, alpha, datum, horizon)?;
        let mut hit = None;
        for (&t, &(s, i)) in traj.times().iter().zip(traj.states()) {
            if i > mu {
                continue;
            }
            // Below the band the infected derivative is negative at every
            // phase; no quadrature needed.
            if s < x_lo {
                hit = Some(t);
                break;
            }
            // Phase-aware fallback: S never increases, so beta*S stays
            // under m = beta_hi * S(t) and the envelope caps every future
            // excursion of I.
            let env = shifted.gamma_envelope_sup(t, beta_hi * s);
            if env.is_finite() && i * env.exp() <= mu {
                hit = Some(t);
                break;
            }
        }
        if let Some(t) = hit {
            return Ok((traj, t));
        }
        horizon *= 2.0;
        if horizon > HORIZON_CAP {
            return Err(Error::NonTermination {
                cap: HORIZON_CAP,
                context: format!(
                    "no certifiable time found: S never fell below {x_lo} with I <= {mu}, \
                     and the growth envelope never confined I under the threshold"
                ),
            });
        }
    }
}

/// Per-interval cubic `I(theta) - mu` in Hermite form.
pub(crate) struct IntervalCubic {
    a: f64,
    h: f64,
    c: [f64; 4],
}

impl IntervalCubic {
    pub(crate) fn new(traj: &Trajectory, k: usize, mu: f64) -> Self {
        let a = traj.times()[k];
        let h = traj.times()[k + 1] - a;
        let p0 = traj.states()[k].1 - mu;
        let p1 = traj.states()[k + 1].1 - mu;
        let m0 = h * traj.derivs()[k].1;
        let m1 = h * traj.derivs()[k + 1].1;
        IntervalCubic {
            a,
            h,
            c: [
                p0,
                m0,
                -3.0 * p0 - 2.0 * m0 + 3.0 * p1 - m1,
                2.0 * p0 + m0 - 2.0 * p1 + m1,
            ],
        }
    }

    pub(crate) fn eval(&self, th: f64) -> f64 {
        ((self.c[3] * th + self.c[2]) * th + self.c[1]) * th + self.c[0]
    }

    /// Derivative with respect to time (not theta).
    pub(crate) fn deriv(&self, th: f64) -> f64 {
        ((3.0 * self.c[3] * th + 2.0 * self.c[2]) * th + self.c[1]) / self.h
    }

    pub(crate) fn time(&self, th: f64) -> f64 {
        self.a + th * self.h
    }

    /// Sign carrier of the second derivative at `th` (positive at minima).
    pub(crate) fn convexity(&self, th: f64) -> f64 {
        2.0 * self.c[2] + 6.0 * self.c[3] * th
    }

    /// Interior critical points of the cubic, ascending in `(0, 1)`.
    pub(crate) fn critical_points(&self) -> Vec<f64> {
        let (a2, a1, a0) = (3.0 * self.c[3], 2.0 * self.c[2], self.c[1]);
        let mut out = Vec::new();
        if a2.abs() < 1e-300 {
            if a1.abs() > 1e-300 {
                out.push(-a0 / a1);
            }
        } else {
            let disc = a1 * a1 - 4.0 * a2 * a0;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // Numerically stable quadratic roots.
                let q = -0.5 * (a1 + a1.signum() * sq);
                let (r1, r2) = (q / a2, if q != 0.0 { a0 / q } else { f64::INFINITY });
                out.push(r1);
                out.push(r2);
            }
        }
        out.retain(|t| t.is_finite() && *t > 0.0 && *t < 1.0);
        out.sort_by(|x, y| x.total_cmp(y));
        out.dedup();
        out
    }

    /// Bisection for the single root in `(lo, hi)` where the endpoint
    /// values have strict opposite signs.
    pub(crate) fn bisect(&self, mut lo: f64, mut hi: f64, atol: f64) -> f64 {
        let mut f_lo = self.eval(lo);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let f_mid = self.eval(mid);
            if f_mid.abs() <= atol * 0.5 || (hi - lo) < 1e-17 {
                return mid;
            }
            if (f_lo > 0.0) == (f_mid > 0.0) {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// All crossings of `I` through `mu` on `[0, horizon]`, ascending in time.
///
/// `deriv_tol` is the absolute tangency tolerance on `I'`; interior
/// extrema that graze the threshold within `TOL_CROSS_REL * mu` and
/// `deriv_tol` are emitted as a paired touch.
pub fn crossings(traj: &Trajectory, mu: f64, horizon: f64, deriv_tol: f64) -> Result<Vec<Crossing>> {
    check_mu(mu)?;
    if traj.horizon() < horizon {
        return Err(Error::domain(format!(
            "trajectory covers [0, {}] but crossings were requested up to {horizon}",
            traj.horizon()
        )));
    }
    let atol = TOL_CROSS_REL * mu;
    let n = traj.len();
    let mut out: Vec<Crossing> = Vec::new();
    if n < 2 {
        return Ok(out);
    }

    for k in 0..n - 1 {
        let cub = IntervalCubic::new(traj, k, mu);
        // Partition the interval at interior critical points; the cubic is
        // monotone on each piece, so plain bisection is exhaustive.
        let mut part = vec![0.0];
        part.extend(cub.critical_points());
        part.push(1.0);
        let vals: Vec<f64> = part.iter().map(|&th| cub.eval(th)).collect();

        for j in 0..part.len() - 1 {
            let (v0, v1) = (vals[j], vals[j + 1]);
            if v0.abs() > atol && v1.abs() > atol && (v0 > 0.0) != (v1 > 0.0) {
                let th = cub.bisect(part[j], part[j + 1], atol);
                let kind = if v0 > 0.0 { CrossingKind::Down } else { CrossingKind::Up };
                out.push(Crossing { s: cub.time(th), kind });
            }
        }

        // Grazing contacts: partition points (including the left node; the
        // right node belongs to the next interval except at the very end)
        // that sit on the threshold itself.
        let last_j = part.len() - 1;
        for j in 0..=last_j {
            if j == last_j && k != n - 2 {
                continue;
            }
            if vals[j].abs() > atol {
                continue;
            }
            let s = cub.time(part[j]);
            // Nearest off-threshold values on each side decide the kind.
            let left = vals[..j].iter().rev().find(|v| v.abs() > atol).copied().or_else(|| {
                if k > 0 {
                    let prev = IntervalCubic::new(traj, k - 1, mu);
                    probe_side(&prev, 1.0, -1.0, atol)
                } else {
                    None
                }
            });
            let right = vals[j + 1..].iter().find(|v| v.abs() > atol).copied().or_else(|| {
                if k < n - 2 {
                    let next = IntervalCubic::new(traj, k + 1, mu);
                    probe_side(&next, 0.0, 1.0, atol)
                } else {
                    None
                }
            });
            match (left, right) {
                (Some(l), Some(r)) if l > 0.0 && r < 0.0 => {
                    out.push(Crossing { s, kind: CrossingKind::Down });
                }
                (Some(l), Some(r)) if l < 0.0 && r > 0.0 => {
                    out.push(Crossing { s, kind: CrossingKind::Up });
                }
                (Some(l), Some(r)) => {
                    // Same sign on both sides: a tangential touch, only
                    // reported when the slope is consistent with tangency.
                    if cub.deriv(part[j]).abs() <= deriv_tol {
                        if l > 0.0 && r > 0.0 {
                            out.push(Crossing { s, kind: CrossingKind::Down });
                            out.push(Crossing { s, kind: CrossingKind::Up });
                        } else {
                            out.push(Crossing { s, kind: CrossingKind::Up });
                            out.push(Crossing { s, kind: CrossingKind::Down });
                        }
                    }
                }
                (None, Some(r)) => {
                    // Leading edge sitting exactly on the threshold: a path
                    // starting at mu and rising is still inside its first
                    // at-or-above era, so only a fall counts as an event.
                    if r < 0.0 {
                        out.push(Crossing { s, kind: CrossingKind::Down });
                    }
                }
                (Some(l), None) => {
                    let kind = if l > 0.0 { CrossingKind::Down } else { CrossingKind::Up };
                    out.push(Crossing { s, kind });
                }
                (None, None) => {}
            }
        }
    }

    out.retain(|c| c.s <= horizon);
    // Stable sort keeps the emission order of equal-time touch pairs.
    out.sort_by(|a, b| a.s.total_cmp(&b.s));
    // Merge duplicates from roots landing exactly on shared partition
    // points of adjacent search ranges.
    let mut dedup: Vec<Crossing> = Vec::with_capacity(out.len());
    for c in out {
        if let Some(last) = dedup.last() {
            if last.kind == c.kind && (c.s - last.s).abs() <= 1e-9 * (1.0 + c.s) {
                continue;
            }
        }
        dedup.push(c);
    }
    Ok(dedup)
}

/// Sign probe for a neighboring interval: the first off-threshold value
/// scanning from `start` in direction `dir`.
fn probe_side(cub: &IntervalCubic, start: f64, dir: f64, atol: f64) -> Option<f64> {
    for i in 1..=8 {
        let th = start + dir * i as f64 / 8.0;
        if !(0.0..=1.0).contains(&th) {
            break;
        }
        let v = cub.eval(th);
        if v.abs() > atol {
            return Some(v);
        }
    }
    None
}

/// Full crossing analysis for a datum: integrates to certification and
/// inventories every crossing.
pub fn eradication_report(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    mu: f64,
) -> Result<CrossingReport> {
    Ok(eradication_report_with_path(rates, alpha, datum, mu)?.0)
}

/// As [`eradication_report`], also returning the integrated path for
/// plotting or further analysis.
pub fn eradication_report_with_path(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    mu: f64,
) -> Result<(CrossingReport, Trajectory)> {
    let (traj, cert) = certified_trajectory(rates, alpha, datum, mu)?;
    let deriv_tol = TOUCH_DERIV_REL * rates.gamma_hi() * mu;
    let cr = crossings(&traj, mu, traj.horizon(), deriv_tol)?;
    let upper_time = cr
        .iter()
        .rev()
        .find(|c| c.kind == CrossingKind::Down)
        .map_or(0.0, |c| c.s);
    let lower_time = cr
        .iter()
        .find(|c| c.kind == CrossingKind::Down)
        .map_or(0.0, |c| c.s);
    let derivative_at_upper = traj.eval_with_deriv(upper_time)?.1 .1;
    Ok((
        CrossingReport {
            mu,
            certified_horizon: cert,
            crossings: cr,
            upper_time,
            lower_time,
            derivative_at_upper,
        },
        traj,
    ))
}

/// Last time the infected fraction is at or above `mu` (0 when it never
/// reaches `mu`).
pub fn upper_time(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    mu: f64,
) -> Result<f64> {
    Ok(eradication_report(rates, alpha, datum, mu)?.upper_time)
}

/// First downward crossing of `mu` (0 when the path never reaches `mu`).
pub fn lower_time(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    mu: f64,
) -> Result<f64> {
    Ok(eradication_report(rates, alpha, datum, mu)?.lower_time)
}
