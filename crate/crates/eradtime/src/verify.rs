//! Cross-layer consistency checks.
//!
//! The trajectory layer and the grid solver compute the same quantities by
//! unrelated algorithms, so their agreement is strong evidence against
//! implementation error. This module packages those comparisons as
//! reports: upper-versus-lower eradication gaps over random ensembles,
//! pointwise PDE residuals of solved grids, semiconcavity probes (bounded
//! second differences), flow-stability tables, and side-by-side values of
//! the grid solver against the trajectory optimizer. Each report carries
//! its own pass predicate where one exists, serializes to CSV with full
//! float precision, and prints a human-readable summary block.
//!
//! Every check is deterministic: ensembles draw from a seeded generator
//! and all iteration orders are fixed, so repeated runs produce
//! byte-identical files.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{flow, Datum};
use crate::eradication::{eradication_report, TOL_CROSS_REL};
use crate::error::Error;
use crate::hjb::{hamiltonian, Form, ValueGrid};
use crate::optimize::{minimize_lower, ControlFamily};
use crate::rates::{ControlSignal, RateSchedule};
use crate::threshold::Mu1Certificate;
use crate::Result;

/// One ensemble member of a gap study.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    /// Digest of the sampled control signal.
    pub control: String,
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
    /// Numerical slack at this row's scale: crossing tolerance times ten.
    pub allowance: f64,
}

/// Gap statistics between the last-crossing and first-crossing eradication
/// times over a random ensemble of data and controls.
#[derive(Debug, Clone)]
pub struct GapReport {
    pub descriptor: String,
    pub mu0: f64,
    pub mu: f64,
    pub seed: u64,
    pub rows: Vec<GapRow>,
    pub max_gap: f64,
    /// Fraction of rows whose gap exceeds the row allowance.
    pub over_fraction: f64,
}

impl GapReport {
    /// True when no row's gap exceeds its numerical allowance.
    pub fn passes(&self) -> bool {
        self.over_fraction == 0.0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,t,control,upper,lower,gap")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}",
                r.x, r.y, r.t, r.control, r.upper, r.lower, r.gap
            )?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check: eradication-time gap")?;
        writeln!(w, "ensemble: {}", self.descriptor)?;
        writeln!(w, "mu0: {:.16e}", self.mu0)?;
        writeln!(w, "mu: {:.16e}", self.mu)?;
        writeln!(w, "seed: {}", self.seed)?;
        writeln!(w, "rows: {}", self.rows.len())?;
        writeln!(w, "max_gap: {:.16e}", self.max_gap)?;
        writeln!(w, "over_allowance_fraction: {:.16e}", self.over_fraction)?;
        writeln!(w, "pass: {}", self.passes())?;
        Ok(())
    }
}

/// Samples `size` data with `y >= mu0` plus random step controls (up to 6
/// switches inside [0, 24]) and reports the two eradication times of each.
/// The gap is zero exactly when the infected path crosses `mu` once.
/// One draw from the gap-study distribution: states in
/// `[0, 1.4) x [mu0, mu0 + 0.5) x [0, 2pi)` and an alternating step
/// control with up to six switches placed in `[0, 24)`.
pub fn sample_gap_datum<R: Rng>(rng: &mut R, mu0: f64) -> Result<(Datum, ControlSignal)> {
    let x = rng.gen_range(0.0..1.4);
    let y = rng.gen_range(mu0..mu0 + 0.5);
    let t = rng.gen_range(0.0..std::f64::consts::TAU);
    let switches = rng.gen_range(0..=6usize);
    let breakpoints: Vec<f64> = (0..switches).map(|_| rng.gen_range(0.0..24.0)).collect();
    let start = rng.gen_range(0..=1u8) as f64;
    let values: Vec<f64> =
        (0..=switches).map(|i| if i % 2 == 0 { start } else { 1.0 - start }).collect();
    Ok((Datum::new(x, y, t)?, ControlSignal::new_sorting(breakpoints, values)?))
}

pub fn gap_report(
    rates: &RateSchedule,
    mu0: f64,
    mu: f64,
    size: usize,
    seed: u64,
) -> Result<GapReport> {
    if !(mu > 0.0 && mu0 >= mu) {
        return Err(Error::domain(format!(
            "gap ensemble needs mu0 >= mu > 0; got mu0 = {mu0}, mu = {mu}"
        )));
    }
    if size == 0 {
        return Err(Error::domain("gap ensemble needs at least one datum"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_hi = mu0 + 0.5;
    let mut rows = Vec::with_capacity(size);
    let mut max_gap = 0.0f64;
    let mut over = 0usize;
    for _ in 0..size {
        let (datum, alpha) = sample_gap_datum(&mut rng, mu0)?;
        let report = eradication_report(rates, &alpha, &datum, mu)?;
        let gap = report.upper_time - report.lower_time;
        let allowance = 10.0 * TOL_CROSS_REL * report.upper_time.max(1.0);
        if gap > allowance {
            over += 1;
        }
        max_gap = max_gap.max(gap);
        rows.push(GapRow {
            x: datum.x,
            y: datum.y,
            t: datum.t0,
            control: alpha.digest(),
            upper: report.upper_time,
            lower: report.lower_time,
            gap,
            allowance,
        });
    }
    Ok(GapReport {
        descriptor: format!(
            "{size} data, x in [0, 1.4], y in [{mu0}, {y_hi}], t in [0, 2pi), step controls"
        ),
        mu0,
        mu,
        seed,
        rows,
        max_gap,
        over_fraction: over as f64 / size as f64,
    })
}

/// Centered-difference residual statistics of a solved grid against the
/// stationary form of the equation, `-Dt u + H(t, x, y, Du) - 1`.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub mean_signed: f64,
    /// Largest magnitude on the `x = 0` column, where the one-dimensional
    /// decay profile makes the residual analytically checkable.
    pub axis_max_abs: f64,
    /// Interior nodes dropped by the smoothness cap.
    pub skipped_fraction: f64,
    pub kept: usize,
    /// `max_abs / (dx + dy + dt)`, the observed first-order constant.
    pub c_res: f64,
}

impl ResidualReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "max_abs,mean_abs,mean_signed,axis_max_abs,skipped_fraction,kept,c_res")?;
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            self.max_abs,
            self.mean_abs,
            self.mean_signed,
            self.axis_max_abs,
            self.skipped_fraction,
            self.kept,
            self.c_res
        )?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check: PDE residual")?;
        writeln!(w, "max_abs: {:.16e}", self.max_abs)?;
        writeln!(w, "mean_abs: {:.16e}", self.mean_abs)?;
        writeln!(w, "mean_signed: {:.16e}", self.mean_signed)?;
        writeln!(w, "axis_max_abs: {:.16e}", self.axis_max_abs)?;
        writeln!(w, "skipped_fraction: {:.16e}", self.skipped_fraction)?;
        writeln!(w, "kept: {}", self.kept)?;
        writeln!(w, "c_res: {:.16e}", self.c_res)?;
        Ok(())
    }
}

/// Evaluates the centered residual at interior nodes, skipping nodes whose
/// second differences exceed `50 / min(dx, dy, dt)` (the solution is only
/// piecewise smooth, and the classical residual means nothing on kinks).
/// The `x = 0` column is evaluated separately with the axis-reduced
/// Hamiltonian, where no `x`-derivative enters.
pub fn residual_check(grid: &ValueGrid, rates: &RateSchedule) -> Result<ResidualReport> {
    if grid.form() != Form::U {
        return Err(Error::Grid(
            "residual check needs the plain-form grid; transform v = exp(-u) back first".into(),
        ));
    }
    let (nx, ny, nt) = (grid.x_nodes().len(), grid.y_nodes().len(), grid.t_nodes().len());
    if nx < 3 || ny < 3 || nt < 3 {
        return Err(Error::domain(format!(
            "residual needs at least 3 nodes per axis for centered differences; \
             got {nx} x {ny} x {nt}"
        )));
    }
    let (dx, dy, dt) = grid.spacings();
    let cap = 50.0 / dx.min(dy).min(dt);
    let u = |ix: usize, iy: usize, it: usize| grid.value_at(ix, iy, it);
    let mut kept = 0usize;
    let mut skipped = 0usize;
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0f64;
    let mut sum = 0.0f64;
    for it in 1..nt - 1 {
        let t = grid.t_nodes()[it];
        for iy in 1..ny - 1 {
            let y = grid.y_nodes()[iy];
            for ix in 1..nx - 1 {
                let u0 = u(ix, iy, it);
                let d2x = (u(ix + 1, iy, it) + u(ix - 1, iy, it) - 2.0 * u0) / (dx * dx);
                let d2y = (u(ix, iy + 1, it) + u(ix, iy - 1, it) - 2.0 * u0) / (dy * dy);
                let d2t = (u(ix, iy, it + 1) + u(ix, iy, it - 1) - 2.0 * u0) / (dt * dt);
                if d2x.abs() > cap || d2y.abs() > cap || d2t.abs() > cap {
                    skipped += 1;
                    continue;
                }
                let p = (u(ix + 1, iy, it) - u(ix - 1, iy, it)) / (2.0 * dx);
                let q = (u(ix, iy + 1, it) - u(ix, iy - 1, it)) / (2.0 * dy);
                let ut = (u(ix, iy, it + 1) - u(ix, iy, it - 1)) / (2.0 * dt);
                let x = grid.x_nodes()[ix];
                let r = -ut + hamiltonian(rates, t, x, y, p, q) - 1.0;
                kept += 1;
                max_abs = max_abs.max(r.abs());
                sum_abs += r.abs();
                sum += r;
            }
        }
    }
    if kept == 0 {
        return Err(Error::domain("every interior node failed the smoothness cap"));
    }
    let mut axis_max_abs = 0.0f64;
    for it in 1..nt - 1 {
        let t = grid.t_nodes()[it];
        for iy in 1..ny - 1 {
            let y = grid.y_nodes()[iy];
            let u0 = u(0, iy, it);
            let d2y = (u(0, iy + 1, it) + u(0, iy - 1, it) - 2.0 * u0) / (dy * dy);
            let d2t = (u(0, iy, it + 1) + u(0, iy, it - 1) - 2.0 * u0) / (dt * dt);
            if d2y.abs() > cap || d2t.abs() > cap {
                continue;
            }
            let q = (u(0, iy + 1, it) - u(0, iy - 1, it)) / (2.0 * dy);
            let ut = (u(0, iy, it + 1) - u(0, iy, it - 1)) / (2.0 * dt);
            // At x = 0 the x-derivative terms carry a factor x and vanish.
            let r = -ut + hamiltonian(rates, t, 0.0, y, 0.0, q) - 1.0;
            axis_max_abs = axis_max_abs.max(r.abs());
        }
    }
    let interior = (nx - 2) * (ny - 2) * (nt - 2);
    Ok(ResidualReport {
        max_abs,
        mean_abs: sum_abs / kept as f64,
        mean_signed: sum / kept as f64,
        axis_max_abs,
        skipped_fraction: skipped as f64 / interior as f64,
        kept,
        c_res: max_abs / (dx + dy + dt),
    })
}

/// Closed probe box inside a grid.
#[derive(Debug, Clone, Copy)]
pub struct ProbeBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub t: (f64, f64),
}

/// Second-difference statistics over a probe box.
#[derive(Debug, Clone)]
pub struct SemiconcavityReport {
    pub k: ProbeBox,
    pub h: f64,
    /// Largest symmetric second difference over all nodes and directions.
    pub d2_max: f64,
    /// One-sided bound implied by the probe: `max(d2_max, 0)`.
    pub c: f64,
    pub probes: usize,
}

impl SemiconcavityReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "h,d2_max,c,probes,x_lo,x_hi,y_lo,y_hi,t_lo,t_hi")?;
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.h,
            self.d2_max,
            self.c,
            self.probes,
            self.k.x.0,
            self.k.x.1,
            self.k.y.0,
            self.k.y.1,
            self.k.t.0,
            self.k.t.1
        )?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check: semiconcavity probe")?;
        writeln!(w, "h: {:.16e}", self.h)?;
        writeln!(w, "d2_max: {:.16e}", self.d2_max)?;
        writeln!(w, "c: {:.16e}", self.c)?;
        writeln!(w, "probes: {}", self.probes)?;
        Ok(())
    }
}

/// Axis, face-diagonal, and space-diagonal probe directions, one per
/// antipodal pair.
const DIRECTIONS: [[i8; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

/// Maximizes the symmetric second difference
/// `[u(z + h d) + u(z - h d) - 2 u(z)] / (h^2 |d|^2)` over grid nodes in
/// `k` and the 13 probe directions. Semiconcavity with linear modulus is
/// exactly an upper bound on this quantity, so a finite, h-stable `c`
/// is the verifiable content of the regularity claim.
pub fn semiconcavity_probe(grid: &ValueGrid, k: &ProbeBox, h: f64) -> Result<SemiconcavityReport> {
    if grid.form() != Form::U {
        return Err(Error::Grid("semiconcavity probes the plain-form grid".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("probe step must be positive; got {h}")));
    }
    for (lo, hi, name) in [(k.x.0, k.x.1, "x"), (k.y.0, k.y.1, "y"), (k.t.0, k.t.1, "t")] {
        if !(lo < hi) {
            return Err(Error::domain(format!("probe box {name} range [{lo}, {hi}] is empty")));
        }
    }
    let eps = 1e-9;
    let inside = k.x.0 - h >= grid.x_nodes()[0] - eps
        && k.x.1 + h <= *grid.x_nodes().last().expect("nonempty") + eps
        && k.y.0 - h >= grid.y_nodes()[0] - eps
        && k.y.1 + h <= *grid.y_nodes().last().expect("nonempty") + eps
        && k.t.0 - h >= grid.t_nodes()[0] - eps
        && k.t.1 + h <= *grid.t_nodes().last().expect("nonempty") + eps;
    if !inside {
        return Err(Error::domain(
            "probe box plus step touches the grid boundary; shrink the box or the step",
        ));
    }
    let in_range = |nodes: &[f64], (lo, hi): (f64, f64)| -> Vec<f64> {
        nodes.iter().copied().filter(|v| *v >= lo - eps && *v <= hi + eps).collect()
    };
    let xs = in_range(grid.x_nodes(), k.x);
    let ys = in_range(grid.y_nodes(), k.y);
    let ts = in_range(grid.t_nodes(), k.t);
    if xs.is_empty() || ys.is_empty() || ts.is_empty() {
        return Err(Error::domain("probe box contains no grid nodes"));
    }
    let mut d2_max = f64::NEG_INFINITY;
    let mut probes = 0usize;
    for &t in &ts {
        for &y in &ys {
            for &x in &xs {
                let u0 = grid.sample(x, y, t)?;
                for d in DIRECTIONS {
                    let (ex, ey, et) = (d[0] as f64, d[1] as f64, d[2] as f64);
                    let up = grid.sample(x + h * ex, y + h * ey, t + h * et)?;
                    let dn = grid.sample(x - h * ex, y - h * ey, t - h * et)?;
                    let norm2 = ex * ex + ey * ey + et * et;
                    d2_max = d2_max.max((up + dn - 2.0 * u0) / (h * h * norm2));
                    probes += 1;
                }
            }
        }
    }
    Ok(SemiconcavityReport { k: *k, h, d2_max, c: d2_max.max(0.0), probes })
}

/// Time after which a frozen-tail schedule guarantees the regularity
/// window: `ln(mu0/mu) / (2 gamma_hi)`. Needs `0 < mu <= mu0`; returns 0
/// when the two thresholds coincide.
pub fn freeze_time(mu0: f64, mu: f64, gamma_hi: f64) -> f64 {
    (mu0 / mu).ln() / (2.0 * gamma_hi)
}

/// One row of a flow-stability table.
#[derive(Debug, Clone)]
pub struct StabilityRow {
    pub delta: f64,
    pub sup_distance: f64,
}

/// Sup-distances between a flow and its initial-data perturbations.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub horizon: f64,
    pub rows: Vec<StabilityRow>,
}

impl StabilityReport {
    /// Distances must shrink with the perturbation.
    pub fn is_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_distance <= w[0].sup_distance + 1e-15)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "delta,sup_distance")?;
        for r in &self.rows {
            writeln!(w, "{:.16e},{:.16e}", r.delta, r.sup_distance)?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check: flow stability")?;
        writeln!(w, "horizon: {:.16e}", self.horizon)?;
        writeln!(w, "rows: {}", self.rows.len())?;
        writeln!(w, "decreasing: {}", self.is_decreasing())?;
        Ok(())
    }
}

/// For each `delta` (nonnegative, descending), integrates the flow from
/// `(x + delta, y + delta, t0)` under the same control and reports the
/// sup over `[0, horizon]` of the componentwise distance to the base flow
/// at 513 uniform sample times.
pub fn stability_check(
    rates: &RateSchedule,
    alpha: &ControlSignal,
    datum: &Datum,
    horizon: f64,
    deltas: &[f64],
) -> Result<StabilityReport> {
    if deltas.is_empty() {
        return Err(Error::domain("stability table needs at least one delta"));
    }
    for w in deltas.windows(2) {
        if !(w[1] <= w[0]) {
            return Err(Error::domain("deltas must be descending"));
        }
    }
    if deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::domain("deltas must be nonnegative and finite"));
    }
    let base = flow(rates, alpha, datum, horizon)?;
    let n = 512usize;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let shifted = Datum::new(datum.x + delta, datum.y + delta, datum.t0)?;
        let pert = flow(rates, alpha, &shifted, horizon)?;
        let mut sup = 0.0f64;
        for j in 0..=n {
            let s = horizon * j as f64 / n as f64;
            let (bx, by) = base.eval(s)?;
            let (px, py) = pert.eval(s)?;
            sup = sup.max((px - bx).abs()).max((py - by).abs());
        }
        rows.push(StabilityRow { delta, sup_distance: sup });
    }
    Ok(StabilityReport { horizon, rows })
}

/// One probe of the grid-versus-optimizer comparison.
#[derive(Debug, Clone)]
pub struct DiscrepancyRow {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub pde: f64,
    pub trajectory: f64,
    pub diff: f64,
}

/// Pointwise comparison of the two computational routes to the value.
#[derive(Debug, Clone)]
pub struct DiscrepancyReport {
    pub mu: f64,
    pub rows: Vec<DiscrepancyRow>,
    pub max_discrepancy: f64,
}

impl DiscrepancyReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,t,pde,trajectory,diff")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.x, r.y, r.t, r.pde, r.trajectory, r.diff
            )?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check: grid vs trajectory optimizer")?;
        writeln!(w, "mu: {:.16e}", self.mu)?;
        writeln!(w, "probes: {}", self.rows.len())?;
        writeln!(w, "max_discrepancy: {:.16e}", self.max_discrepancy)?;
        Ok(())
    }
}

/// Samples the solved grid at each probe and solves the same problem with
/// the trajectory optimizer. The two agree only where the first-crossing
/// and last-crossing times coincide; passing a certificate asserts that
/// regime (`mu <= mu1`), and `None` leaves the judgement to the caller.
pub fn hjb_vs_trajectory(
    grid: &ValueGrid,
    probes: &[(f64, f64, f64)],
    rates: &RateSchedule,
    mu: f64,
    family: &ControlFamily,
    certificate: Option<&Mu1Certificate>,
) -> Result<DiscrepancyReport> {
    if probes.is_empty() {
        return Err(Error::domain("comparison needs at least one probe"));
    }
    if let Some(cert) = certificate {
        if mu > cert.mu1 * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "threshold mu = {mu} exceeds the certified mu1 = {}; the two eradication \
                 times need not agree there",
                cert.mu1
            )));
        }
    }
    let mut rows = Vec::with_capacity(probes.len());
    let mut max_discrepancy = 0.0f64;
    for &(x, y, t) in probes {
        let raw = grid.sample(x, y, t)?;
        let pde = match grid.form() {
            Form::U => raw,
            Form::V => -raw.ln(),
        };
        let trajectory = minimize_lower(x, y, t, mu, rates, family)?.value;
        let diff = (pde - trajectory).abs();
        max_discrepancy = max_discrepancy.max(diff);
        rows.push(DiscrepancyRow { x, y, t, pde, trajectory, diff });
    }
    Ok(DiscrepancyReport { mu, rows, max_discrepancy })
}
