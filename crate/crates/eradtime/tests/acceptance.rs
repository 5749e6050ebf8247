//! Acceptance suite: nine end-to-end criteria, one pass/fail line each.
//!
//! Each criterion prints `criterion N: PASS/FAIL (details)` and then
//! asserts, so the harness result mirrors the printed line. A process-wide
//! gate serializes the criteria: the box has one core, and the timed
//! budgets would otherwise measure scheduler contention instead of work.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eradtime::cli::run_from;
use eradtime::dynamics::Datum;
use eradtime::eradication::{eradication_report, eradication_report_with_path};
use eradtime::hjb::{
    frozen_terminal, kruzkov_solve, march_backward, sample_value, BoundaryData, GridSpec,
    MarchSpec, StationaryOptions, ValueGrid,
};
use eradtime::optimize::{enumerate_bangbang, minimize_lower, minimize_upper, ControlFamily};
use eradtime::rates::{ControlSignal, RateKind, RateSchedule, Sinusoid};
use eradtime::threshold::{interior_minima, mu1};
use eradtime::verify::{
    freeze_time, gap_report, hjb_vs_trajectory, sample_gap_datum, semiconcavity_probe, ProbeBox,
};

static GATE: Mutex<()> = Mutex::new(());

fn serialize_criteria() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn conclude(name: &str, pass: bool, detail: &str) {
    println!("criterion {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {name} failed: {detail}");
}

fn scenario_b_rates() -> RateSchedule {
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

fn scenario_c_rates() -> RateSchedule {
    RateSchedule::new(
        RateKind::FrozenAfter {
            base: Box::new(RateKind::Sinusoidal {
                beta: Sinusoid { base: 0.4, amp: 0.0, freq: 1.0, phase: 0.0 },
                gamma: Sinusoid { base: 0.3, amp: 0.2, freq: 1.0, phase: 0.0 },
            }),
            t_freeze: std::f64::consts::LN_10,
            beta0: 0.4,
            gamma0: 0.3,
            ramp: 1e-3,
        },
        0.4,
        0.4,
        0.3,
        0.5,
    )
    .unwrap()
}

const ENSEMBLE_SEED: u64 = 2026;

/// Boundary-value grid for the frozen schedule: lower face on `mu0 = 0.1`
/// above the final threshold, boundary tables from the trajectory layer,
/// terminal slice from the frozen stationary solve, substeps chosen by
/// the stability bound.
fn scenario_c_grid(
    rates: &RateSchedule,
    family: &ControlFamily,
    nx: usize,
    ny: usize,
    nt: usize,
    t_span: f64,
    transformed: bool,
) -> ValueGrid {
    let mu = 0.01;
    let mu_b = 0.1;
    let spec = GridSpec::new(1.5, nx, 0.6, ny).unwrap();
    let boundary =
        BoundaryData::from_traces(rates, mu, mu_b, &spec, t_span, family, 16, 6).unwrap();
    let march = MarchSpec::cfl_substeps(t_span, nt, rates, &spec, mu_b).unwrap();
    let terminal =
        frozen_terminal(&spec, rates, mu_b, &boundary, t_span, StationaryOptions::default())
            .unwrap();
    if transformed {
        kruzkov_solve(&spec, rates, mu_b, &march, &terminal, &boundary).unwrap()
    } else {
        march_backward(&spec, rates, mu_b, &march, &terminal, &boundary).unwrap()
    }
}

const C_PROBES: [(f64, f64, f64); 8] = [
    (0.30, 0.20, 0.35),
    (0.60, 0.15, 0.50),
    (0.60, 0.22, 1.00),
    (0.90, 0.20, 1.00),
    (0.90, 0.22, 0.50),
    (1.20, 0.25, 1.50),
    (0.45, 0.22, 1.80),
    (1.00, 0.15, 0.80),
];

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn criterion_1_analytic_axis() {
    let _gate = serialize_criteria();
    let start = Instant::now();
    let mu = 0.01;
    let family = enumerate_bangbang(64.0, 2).unwrap();
    let alpha = ControlSignal::constant(0.0);
    let mut worst_traj = 0.0f64;
    let mut worst_pde_ratio = 0.0f64;
    for gamma0 in [0.1, 0.2, 0.5] {
        let rates = RateSchedule::constant(0.4, gamma0).unwrap();
        let spec = GridSpec::new(1.5, 16, 1.1, 76).unwrap();
        let t_span = 1.0;
        let boundary =
            BoundaryData::from_traces(&rates, mu, mu, &spec, t_span, &family, 111, 3).unwrap();
        let march = MarchSpec::cfl_substeps(t_span, 11, &rates, &spec, mu).unwrap();
        let terminal =
            frozen_terminal(&spec, &rates, mu, &boundary, t_span, StationaryOptions::default())
                .unwrap();
        let grid = march_backward(&spec, &rates, mu, &march, &terminal, &boundary).unwrap();
        let (dx, dy, dt) = grid.spacings();
        let pde_tol = 3.0 * (dx + dy + dt) / gamma0;
        for ratio in [2.0, 10.0, 100.0] {
            let y = ratio * mu;
            let exact = ratio.ln() / gamma0;
            let datum = Datum::new(0.0, y, 0.0).unwrap();
            let report = eradication_report(&rates, &alpha, &datum, mu).unwrap();
            let lower = minimize_lower(0.0, y, 0.0, mu, &rates, &family).unwrap().value;
            let upper = minimize_upper(0.0, y, 0.0, mu, &rates, &family).unwrap().value;
            for t in [report.upper_time, report.lower_time, lower, upper] {
                worst_traj = worst_traj.max((t - exact).abs());
            }
            let sampled = sample_value(&grid, 0.0, y, 0.0).unwrap();
            worst_pde_ratio = worst_pde_ratio.max((sampled - exact).abs() / pde_tol);
        }
    }
    let elapsed = start.elapsed();
    conclude(
        "1",
        worst_traj <= 1e-6 && worst_pde_ratio <= 1.0 && elapsed < Duration::from_secs(10),
        &format!(
            "trajectory err {worst_traj:.2e} <= 1e-6, pde err/tol {worst_pde_ratio:.3} <= 1, \
             {elapsed:.1?} < 10s"
        ),
    );
}

#[test]
fn criterion_2_safe_threshold_certificate() {
    let _gate = serialize_criteria();
    let start = Instant::now();
    let rates = scenario_b_rates();
    let lax = gap_report(&rates, 0.1, 0.04, 1000, ENSEMBLE_SEED).unwrap();
    let lax_ok = lax.max_gap > 0.1;
    match mu1(0.1, &rates, 33) {
        Ok(cert) => {
            let tight = gap_report(&rates, 0.1, cert.mu1, 1000, ENSEMBLE_SEED).unwrap();
            let elapsed = start.elapsed();
            conclude(
                "2",
                tight.passes() && lax_ok && elapsed < Duration::from_secs(120),
                &format!(
                    "certified mu1 {:.3e}: max gap {:.2e} within allowance {}, lax mu 0.04 \
                     max gap {:.3} > 0.1 {}, {elapsed:.1?} < 2min",
                    cert.mu1,
                    tight.max_gap,
                    tight.passes(),
                    lax.max_gap,
                    lax_ok
                ),
            );
        }
        Err(e) => conclude(
            "2",
            false,
            &format!(
                "no certificate: the band exit-time sweep diverges ({e}); the lax leg alone \
                 holds: mu 0.04 max gap {:.3} > 0.1 is {lax_ok}",
                lax.max_gap
            ),
        ),
    }
}

#[test]
fn criterion_3_stationary_point_exclusion() {
    let _gate = serialize_criteria();
    let rates = scenario_b_rates();
    match mu1(0.1, &rates, 33) {
        Ok(cert) => {
            let mut rng = ChaCha8Rng::seed_from_u64(ENSEMBLE_SEED);
            let mut events = 0usize;
            let mut violations = 0usize;
            for _ in 0..1000 {
                let (datum, alpha) = sample_gap_datum(&mut rng, 0.1).unwrap();
                let (_, traj) =
                    eradication_report_with_path(&rates, &alpha, &datum, cert.mu1).unwrap();
                for (_, i) in interior_minima(&traj) {
                    events += 1;
                    if i <= cert.mu1 {
                        violations += 1;
                    }
                }
            }
            conclude(
                "3",
                violations == 0 && events > 0,
                &format!("{events} stationary events, {violations} at or below mu1"),
            );
        }
        Err(e) => conclude(
            "3",
            false,
            &format!("needs the scenario-B certificate, which diverges: {e}"),
        ),
    }
}

#[test]
fn criterion_4_constant_rate_collapse() {
    let _gate = serialize_criteria();
    let start = Instant::now();
    let rates = RateSchedule::constant(0.5, 0.2).unwrap();
    let gap = gap_report(&rates, 0.1, 0.01, 500, 42).unwrap();
    let elapsed = start.elapsed();
    conclude(
        "4",
        gap.passes() && elapsed < Duration::from_secs(30),
        &format!(
            "max gap {:.2e} over {} data within allowance, {elapsed:.1?} < 30s",
            gap.max_gap,
            gap.rows.len()
        ),
    );
}

#[test]
fn criterion_5_pde_trajectory_agreement() {
    let _gate = serialize_criteria();
    let rates = scenario_c_rates();
    let family = enumerate_bangbang(64.0, 4).unwrap();
    let t_span = std::f64::consts::LN_10;
    let mut maxes = [0.0f64; 2];
    let mut within = [Duration::ZERO; 2];
    for (i, (nx, ny, nt)) in [(101, 101, 47), (201, 201, 93)].into_iter().enumerate() {
        let start = Instant::now();
        let grid = scenario_c_grid(&rates, &family, nx, ny, nt, t_span, false);
        let d = hjb_vs_trajectory(&grid, &C_PROBES, &rates, 0.01, &family, None).unwrap();
        maxes[i] = d.max_discrepancy;
        within[i] = start.elapsed();
    }
    let reduction = maxes[0] / maxes[1];
    conclude(
        "5",
        maxes[0] <= 0.05
            && reduction >= 1.7
            && within.iter().all(|w| *w < Duration::from_secs(300)),
        &format!(
            "coarse max {:.4} <= 0.05, fine max {:.4}, reduction {reduction:.2} >= 1.7, \
             per-grid {:.0?}/{:.0?} < 5min",
            maxes[0], maxes[1], within[0], within[1]
        ),
    );
}

#[test]
fn criterion_6_uniqueness_surrogate() {
    let _gate = serialize_criteria();
    let rates = scenario_c_rates();
    let family = enumerate_bangbang(64.0, 4).unwrap();
    let t_span = std::f64::consts::LN_10;
    let grid_u = scenario_c_grid(&rates, &family, 101, 101, 47, t_span, false);
    let grid_v = scenario_c_grid(&rates, &family, 101, 101, 47, t_span, true);
    let (dx, dy, dt) = grid_u.spacings();
    let budget = 5.0 * (dx + dy + dt);
    let (nx, ny, nt) =
        (grid_u.x_nodes().len(), grid_u.y_nodes().len(), grid_u.t_nodes().len());
    let mut sup = 0.0f64;
    for it in 1..nt - 1 {
        for iy in 1..ny - 1 {
            for ix in 1..nx - 1 {
                let u = grid_u.value_at(ix, iy, it);
                let v = grid_v.value_at(ix, iy, it);
                sup = sup.max((u + v.ln()).abs());
            }
        }
    }
    conclude(
        "6",
        sup <= budget,
        &format!("interior sup |u + ln v| = {sup:.4} <= 5(dx+dy+dt) = {budget:.4}"),
    );
}

#[test]
fn criterion_7_semiconcavity_stabilizes() {
    let _gate = serialize_criteria();
    let rates = scenario_c_rates();
    let family = enumerate_bangbang(64.0, 4).unwrap();
    let t_freeze = freeze_time(0.1, 0.01, rates.gamma_hi());
    // All three spacings equal 0.025 here, so the probe steps 0.05 and
    // 0.025 land on grid nodes; sub-cell steps would measure the
    // interpolant's facets instead of the value function.
    let grid = scenario_c_grid(&rates, &family, 61, 21, 95, 2.35, false);
    let k = ProbeBox { x: (0.3, 0.9), y: (0.15, 0.4), t: (0.5, t_freeze - 0.5) };
    let coarse = semiconcavity_probe(&grid, &k, 0.05).unwrap();
    let fine = semiconcavity_probe(&grid, &k, 0.025).unwrap();
    let ratio = if coarse.c > 0.0 { fine.c / coarse.c } else { 1.0 };
    conclude(
        "7",
        ratio <= 1.2 && fine.c.is_finite() && coarse.c.is_finite(),
        &format!(
            "C(h=0.05) = {:.5}, C(h=0.025) = {:.5}, halving ratio {ratio:.4} <= 1.2",
            coarse.c, fine.c
        ),
    );
}

#[test]
fn criterion_8_figure_reproduction() {
    let _gate = serialize_criteria();
    let dir = tempfile::tempdir().unwrap();
    let config_path = configs_dir().join("scenario-b.json");
    run_from([
        "eradtime",
        "fig1",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .unwrap();

    let svg = std::fs::read_to_string(dir.path().join("fig1.svg")).unwrap();
    let crossings = svg.matches(r#"class="crossing-mark""#).count();
    let markers_distinct = svg.contains(r#"class="lower-marker""#)
        && svg.contains(r#"class="upper-marker""#);

    let rates = scenario_b_rates();
    let alpha = ControlSignal::constant(0.0);
    let datum = Datum::new(1.0, 0.05, 0.0).unwrap();
    let report = eradication_report(&rates, &alpha, &datum, 0.04).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
    let gap_field: f64 = csv.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    let exact = gap_field == report.upper_time - report.lower_time;

    conclude(
        "8",
        crossings >= 3 && markers_distinct && exact,
        &format!(
            "{crossings} crossings >= 3, distinct markers {markers_distinct}, csv gap \
             {gap_field:.6e} equals report exactly: {exact}"
        ),
    );
}

#[test]
fn criterion_9_verify_suite_determinism() {
    let _gate = serialize_criteria();
    let dir = tempfile::tempdir().unwrap();
    let config_path = configs_dir().join("scenario-c.json");
    let out = [dir.path().join("one"), dir.path().join("two")];
    for o in &out {
        run_from([
            "eradtime",
            "verify",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
            "--seed",
            "7",
        ])
        .unwrap();
    }
    let mut compared = 0usize;
    let mut identical = true;
    for entry in std::fs::read_dir(&out[0]).unwrap() {
        let name = entry.unwrap().file_name();
        if Path::new(&name).extension().is_some_and(|e| e == "csv") {
            compared += 1;
            let a = std::fs::read(out[0].join(&name)).unwrap();
            let b = std::fs::read(out[1].join(&name)).unwrap();
            identical &= a == b;
        }
    }
    conclude(
        "9",
        compared >= 5 && identical,
        &format!("{compared} csv files byte-identical across same-seed runs: {identical}"),
    );
}
