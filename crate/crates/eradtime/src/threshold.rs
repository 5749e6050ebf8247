//! Safe-threshold certification.
//!
//! The infected derivative can vanish only while `S` sits in the band
//! `X = [gamma_lo/beta_hi, gamma_hi/beta_lo]`. Once the flow leaves the
//! band downward, `I` decreases forever. Bounding the band exit time by
//! `M` over worst-case starts yields a threshold
//!
//! ```text
//! mu1 = (mu0 / 2) * exp(-gamma_hi * M)
//! ```
//!
//! below every interior minimum of `I` for flows starting with at least
//! `mu0` infected. At thresholds `mu <= mu1` the two eradication times
//! coincide: the path crosses `mu` exactly once.
//!
//! The bound `M` is certified by a sweep: the exit time map is continuous
//! in the entry state, so a dense sample maximum plus a safety factor
//! dominates it. The sweep fixes the slowest-draining configuration, no
//! vaccination and the minimal initial infected load `mu0`: vaccination
//! only accelerates the decay of `S`, and a larger infected pool drains
//! `S` faster.
//!
//! The sweep can fail to terminate, and the failure is meaningful. The
//! band floor sits at `gamma_lo / beta_hi`, the most infectious instant
//! of the cycle, while the wave stops growing once `beta * S` falls below
//! the running `gamma`. When the recovery rate oscillates widely, flows
//! started with a small infected load stall with `S` strictly inside the
//! band: `I` decays to zero, `S` converges above the floor, and no finite
//! exit bound exists. [`exit_time`] reports this as a non-termination
//! error once the doubling horizon passes [`EXIT_CAP`], and the
//! certificate is refused rather than weakened.

use std::io::Write;

use serde::Serialize;

use crate::dynamics::{flow, Datum, Trajectory};
use crate::eradication::IntervalCubic;
use crate::error::Error;
use crate::rates::{ControlSignal, RateSchedule};
use crate::Result;

/// Safety factor applied to the sweep maximum.
pub const SAFETY: f64 = 0.1;

/// Absolute tolerance on `|S - x_lo|` at the reported exit time.
pub const TOL_EXIT: f64 = 1e-10;

/// Horizon cap for the exit search.
pub const EXIT_CAP: f64 = 1e4;

/// Constructive safe-threshold certificate.
#[derive(Debug, Clone, Serialize)]
pub struct Mu1Certificate {
    pub mu0: f64,
    /// Certified upper bound on the band exit time (sweep max + safety).
    pub m_bound: f64,
    pub mu1: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub sample_count: usize,
    /// Largest exit time actually observed in the sweep.
    pub max_observed_t: f64,
}

impl Mu1Certificate {
    /// Writes the certificate as `key: value` lines.
    pub fn write_report<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mu0: {:.16e}", self.mu0)?;
        writeln!(w, "m_bound: {:.16e}", self.m_bound)?;
        writeln!(w, "mu1: {:.16e}", self.mu1)?;
        writeln!(w, "x_lo: {:.16e}", self.x_lo)?;
        writeln!(w, "x_hi: {:.16e}", self.x_hi)?;
        writeln!(w, "sample_count: {}", self.sample_count)?;
        writeln!(w, "max_observed_t: {:.16e}", self.max_observed_t)?;
        Ok(())
    }
}

/// First time the susceptible fraction falls to the band floor
/// `gamma_lo / beta_hi`, starting from `(x0, y0)` under `control`.
///
/// Refined by bisection on the dense output to [`TOL_EXIT`].
pub fn exit_time(
    x0: f64,
    rates: &RateSchedule,
    control: &ControlSignal,
    y0: f64,
) -> Result<f64> {
    let x_lo = rates.x_lo();
    let x_hi = rates.x_hi();
    if !(x0 >= x_lo && x0 <= x_hi) {
        return Err(Error::domain(format!(
            "exit start x0 = {x0} outside the stationarity band [{x_lo}, {x_hi}]"
        )));
    }
    if !(y0 > 0.0) {
        return Err(Error::domain(format!("exit search needs y0 > 0; got {y0}")));
    }
    if x0 <= x_lo {
        return Ok(0.0);
    }
    let datum = Datum::new(x0, y0, 0.0)?;
    let mut horizon = 64.0;
    loop {
        let traj = flow(rates, control, &datum, horizon)?;
        if let Some(k) = traj.states().iter().position(|&(s, _)| s <= x_lo) {
            if k == 0 {
                return Ok(0.0);
            }
            // S - x_lo changes sign on [k-1, k]; S is monotone there, so
            // a plain bisection of the dense output pins the exit.
            let mut lo = traj.times()[k - 1];
            let mut hi = traj.times()[k];
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let s_mid = traj.eval(mid)?.0;
                if (s_mid - x_lo).abs() <= TOL_EXIT {
                    return Ok(mid);
                }
                if s_mid > x_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        horizon *= 2.0;
        if horizon > EXIT_CAP {
            return Err(Error::NonTermination {
                cap: EXIT_CAP,
                context: format!(
                    "S never reached the band floor {x_lo} from x0 = {x0}, y0 = {y0}; \
                     the infected pool may decay before draining S"
                ),
            });
        }
    }
}

/// Certified bound on the exit-time map over the band: the maximum of
/// `exit_time` over `n_samples` uniform starts (no vaccination, initial
/// infected `mu0`), inflated by [`SAFETY`].
pub fn sup_exit_time(rates: &RateSchedule, mu0: f64, n_samples: usize) -> Result<f64> {
    Ok(sup_exit_time_inner(rates, mu0, n_samples)?.0)
}

fn sup_exit_time_inner(rates: &RateSchedule, mu0: f64, n_samples: usize) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::domain(format!(
            "exit-time sweep needs at least 2 samples; got {n_samples}"
        )));
    }
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return Err(Error::domain(format!("mu0 must be finite and positive; got {mu0}")));
    }
    let (x_lo, x_hi) = (rates.x_lo(), rates.x_hi());
    let alpha0 = ControlSignal::constant(0.0);
    let mut max_t: f64 = 0.0;
    for i in 0..n_samples {
        let x0 = if x_hi > x_lo {
            x_lo + (x_hi - x_lo) * i as f64 / (n_samples - 1) as f64
        } else {
            x_hi
        };
        max_t = max_t.max(exit_time(x0, rates, &alpha0, mu0)?);
    }
    Ok(((1.0 + SAFETY) * max_t, max_t))
}

/// Builds the safe-threshold certificate for `mu0`.
pub fn mu1(mu0: f64, rates: &RateSchedule, n_samples: usize) -> Result<Mu1Certificate> {
    let (m_bound, max_observed_t) = sup_exit_time_inner(rates, mu0, n_samples)?;
    // exp(-gamma_hi * M) <= 1, so the halved value never exceeds mu0.
    let mu1 = 0.5 * mu0 * (-rates.gamma_hi() * m_bound).exp();
    Ok(Mu1Certificate {
        mu0,
        m_bound,
        mu1,
        x_lo: rates.x_lo(),
        x_hi: rates.x_hi(),
        sample_count: n_samples,
        max_observed_t,
    })
}

/// Interior local minima of the infected curve, as `(time, value)` pairs.
///
/// Detected on the dense Hermite model: critical points with positive
/// convexity inside each node interval. The certificate asserts every
/// such value stays above `mu1` for flows with `I(0) >= mu0`.
pub fn interior_minima(traj: &Trajectory) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let n = traj.len();
    if n < 2 {
        return out;
    }
    let end = traj.horizon();
    for k in 0..n - 1 {
        let cub = IntervalCubic::new(traj, k, 0.0);
        for th in cub.critical_points() {
            if cub.convexity(th) > 0.0 {
                let t = cub.time(th);
                if t > 0.0 && t < end {
                    out.push((t, cub.eval(th)));
                }
            }
        }
    }
    out
}
