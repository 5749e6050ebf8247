//! Command-line driver: one config file, one subcommand per layer.
//!
//! Grammar: `eradtime <subcommand> --config <path> [--out <dir>] [--seed <u64>]`.
//! The output directory resolves flag first, then the `ERADTIME_OUT`
//! environment variable, then the config; the seed flag overrides the
//! config's ensemble seed. Identical config and seed give byte-identical
//! outputs. `verify` runs every check, writes the full report set, and
//! returns an error (nonzero exit) when any check fails.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::dynamics::{flow, Datum};
use crate::eradication::{eradication_report, CrossingReport};
use crate::error::Error;
use crate::hjb::{
    frozen_terminal, kruzkov_solve, march_backward, BoundaryData, GridSpec, MarchSpec,
    StationaryOptions, ValueGrid,
};
use crate::optimize::{minimize_lower, minimize_upper, ControlFamily};
use crate::rates::RateSchedule;
use crate::report::{figure_boundary, figure_gap};
use crate::threshold::{mu1, Mu1Certificate};
use crate::verify::{
    gap_report, hjb_vs_trajectory, residual_check, semiconcavity_probe, stability_check,
    ProbeBox,
};
use crate::Result;

/// Output-directory override; the `--out` flag still wins.
pub const OUT_ENV: &str = "ERADTIME_OUT";

/// Band samples for the safe-threshold sweep.
const MU1_SAMPLES: usize = 33;
/// Default pass bar for the grid-versus-optimizer check.
const DEFAULT_DISCREPANCY: f64 = 0.05;
/// Perturbation sizes for the stability table.
const STABILITY_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

#[derive(Parser)]
#[command(
    name = "eradtime",
    version,
    about = "Minimum eradication times for a controlled SIR model with time-varying rates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ensemble seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured flow and write the trajectory CSV.
    Simulate(RunArgs),
    /// Crossing inventory and both eradication times for the configured datum.
    Eradication(RunArgs),
    /// Compute and write the safe-threshold certificate.
    Mu1(RunArgs),
    /// Minimize both eradication times over the bang-bang family.
    Optimize(RunArgs),
    /// Solve the grid equation and persist the value grid.
    Hjb(RunArgs),
    /// Run every check and write the full report set.
    Verify(RunArgs),
    /// Gap figure: one infected curve with both eradication markers.
    Fig1(RunArgs),
    /// Effective-boundary sketch in the xy-plane.
    Fig2(RunArgs),
}

/// Entry point for the binary; parses the real process arguments.
pub fn run() -> Result<()> {
    dispatch(Cli::parse())
}

/// Entry point for tests: parses the given arguments instead.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    let (args, cmd): (&RunArgs, fn(&ExperimentConfig, &Path) -> Result<()>) =
        match &cli.command {
            Command::Simulate(a) => (a, cmd_simulate),
            Command::Eradication(a) => (a, cmd_eradication),
            Command::Mu1(a) => (a, cmd_mu1),
            Command::Optimize(a) => (a, cmd_optimize),
            Command::Hjb(a) => (a, cmd_hjb),
            Command::Verify(a) => (a, cmd_verify),
            Command::Fig1(a) => (a, cmd_fig1),
            Command::Fig2(a) => (a, cmd_fig2),
        };
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.ensemble.seed = seed;
    }
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => match std::env::var_os(OUT_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => config.output_dir.clone(),
        },
    };
    fs::create_dir_all(&out)?;
    cmd(&config, &out)
}

fn rates_of(config: &ExperimentConfig) -> Result<RateSchedule> {
    config.schedule.to_rates()
}

fn datum_of(config: &ExperimentConfig) -> Result<Datum> {
    Datum::new(config.datum.x, config.datum.y, config.datum.t)
}

fn create(path: &Path) -> Result<File> {
    Ok(File::create(path)?)
}

fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let alpha = config.control.to_signal()?;
    let traj = flow(&rates, &alpha, &datum_of(config)?, config.horizon)?;
    let path = out.join("trajectory.csv");
    traj.write_csv(create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_eradication(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let alpha = config.control.to_signal()?;
    let report = eradication_report(&rates, &alpha, &datum_of(config)?, config.thresholds.mu)?;
    let csv = out.join("crossings.csv");
    report.write_csv(create(&csv)?)?;
    let txt = out.join("eradication.txt");
    write_crossing_summary(&report, create(&txt)?)?;
    println!(
        "lower {:.6}, upper {:.6}, gap {:.6}; wrote {} and {}",
        report.lower_time,
        report.upper_time,
        report.upper_time - report.lower_time,
        csv.display(),
        txt.display()
    );
    Ok(())
}

fn write_crossing_summary<W: Write>(report: &CrossingReport, mut w: W) -> Result<()> {
    writeln!(w, "mu: {:.16e}", report.mu)?;
    writeln!(w, "certified_horizon: {:.16e}", report.certified_horizon)?;
    writeln!(w, "crossings: {}", report.crossings.len())?;
    writeln!(w, "lower_time: {:.16e}", report.lower_time)?;
    writeln!(w, "upper_time: {:.16e}", report.upper_time)?;
    writeln!(w, "gap: {:.16e}", report.upper_time - report.lower_time)?;
    writeln!(w, "derivative_at_upper: {:.16e}", report.derivative_at_upper)?;
    Ok(())
}

fn cmd_mu1(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let cert = mu1(config.thresholds.mu0, &rates, MU1_SAMPLES)?;
    let path = out.join("mu1.txt");
    cert.write_report(create(&path)?)?;
    println!("mu1 = {:.16e} for mu0 = {}; wrote {}", cert.mu1, cert.mu0, path.display());
    Ok(())
}

fn cmd_optimize(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let family = config.family.to_family()?;
    let d = config.datum;
    let mu = config.thresholds.mu;
    for (tag, result) in [
        ("lower", minimize_lower(d.x, d.y, d.t, mu, &rates, &family)?),
        ("upper", minimize_upper(d.x, d.y, d.t, mu, &rates, &family)?),
    ] {
        let csv = out.join(format!("optimize_{tag}.csv"));
        result.write_csv(create(&csv)?)?;
        let txt = out.join(format!("optimize_{tag}.txt"));
        result.write_report(create(&txt)?)?;
        println!("{tag} minimum {:.10} after {} evaluations", result.value, result.evaluations);
    }
    Ok(())
}

/// Boundary tables, substep count, terminal slice: everything the marches
/// need, built once so the plain and transformed solves share it.
struct GridPipeline {
    spec: GridSpec,
    mu_b: f64,
    boundary: BoundaryData,
    march: MarchSpec,
    terminal: crate::hjb::Slice,
}

fn grid_pipeline(
    config: &ExperimentConfig,
    rates: &RateSchedule,
    family: &ControlFamily,
) -> Result<GridPipeline> {
    let spec = config.grid.to_spec()?;
    let mu_b = config.mu_b();
    let boundary = BoundaryData::from_traces(
        rates,
        config.thresholds.mu,
        mu_b,
        &spec,
        config.grid.t_span,
        family,
        config.grid.face_samples,
        config.grid.time_samples,
    )?;
    let march =
        MarchSpec::cfl_substeps(config.grid.t_span, config.grid.nt, rates, &spec, mu_b)?;
    let opts = StationaryOptions { tol: config.tolerances.tol_vi, ..Default::default() };
    let terminal =
        frozen_terminal(&spec, rates, mu_b, &boundary, config.grid.t_span, opts)?;
    Ok(GridPipeline { spec, mu_b, boundary, march, terminal })
}

impl GridPipeline {
    fn solve_plain(&self, rates: &RateSchedule) -> Result<ValueGrid> {
        march_backward(&self.spec, rates, self.mu_b, &self.march, &self.terminal, &self.boundary)
    }

    fn solve_transformed(&self, rates: &RateSchedule) -> Result<ValueGrid> {
        kruzkov_solve(&self.spec, rates, self.mu_b, &self.march, &self.terminal, &self.boundary)
    }
}

fn cmd_hjb(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let family = config.family.to_family()?;
    let pipeline = grid_pipeline(config, &rates, &family)?;
    let grid = pipeline.solve_plain(&rates)?;
    let bin = out.join("grid_u.bin");
    grid.write_binary(create(&bin)?)?;
    let csv = out.join("grid_u_t0.csv");
    grid.write_slice_csv(0, create(&csv)?)?;
    let (dx, dy, dt) = grid.spacings();
    let mut txt = create(&out.join("hjb.txt"))?;
    writeln!(txt, "digest: {}", grid.digest())?;
    writeln!(txt, "dx: {dx:.16e}")?;
    writeln!(txt, "dy: {dy:.16e}")?;
    writeln!(txt, "dt: {dt:.16e}")?;
    writeln!(txt, "substeps: {}", (pipeline.march.dt_store() / pipeline.march.dt()).round())?;
    writeln!(txt, "clamped_feet: {}", grid.clamp_count())?;
    println!("wrote {} and {}", bin.display(), csv.display());
    Ok(())
}

fn cmd_fig1(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let alpha = config.control.to_signal()?;
    let datum = datum_of(config)?;
    let report = eradication_report(&rates, &alpha, &datum, config.thresholds.mu)?;
    let span = (report.upper_time.max(1.0)) * 1.15;
    let traj = flow(&rates, &alpha, &datum, span)?;
    let svg = out.join("fig1.svg");
    figure_gap(&traj, &report, &svg)?;
    let mut csv = create(&out.join("fig1.csv"))?;
    writeln!(csv, "mu,lower_time,upper_time,gap")?;
    writeln!(
        csv,
        "{:.16e},{:.16e},{:.16e},{:.16e}",
        report.mu,
        report.lower_time,
        report.upper_time,
        report.upper_time - report.lower_time
    )?;
    report.write_csv(create(&out.join("crossings.csv"))?)?;
    println!("{} crossings; wrote {}", report.crossings.len(), svg.display());
    Ok(())
}

fn cmd_fig2(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let path = out.join("fig2.svg");
    figure_boundary(&rates, config.thresholds.mu0, config.grid.y_max, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// One verification check's outcome for the master summary.
struct CheckLine {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cmd_verify(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let rates = rates_of(config)?;
    let alpha = config.control.to_signal()?;
    let datum = datum_of(config)?;
    let family = config.family.to_family()?;
    let mu0 = config.thresholds.mu0;
    let mu = config.thresholds.mu;
    let mut checks: Vec<CheckLine> = Vec::new();

    let cert: Mu1Certificate = mu1(mu0, &rates, MU1_SAMPLES)?;
    cert.write_report(create(&out.join("mu1.txt"))?)?;
    checks.push(CheckLine {
        name: "threshold",
        pass: cert.mu1 > 0.0,
        detail: format!("mu1 = {:.6e}, band sup exit time {:.4}", cert.mu1, cert.max_observed_t),
    });

    let gap = gap_report(&rates, mu0, mu, config.ensemble.size, config.ensemble.seed)?;
    gap.write_csv(create(&out.join("gap.csv"))?)?;
    gap.write_summary(create(&out.join("gap.txt"))?)?;
    checks.push(CheckLine {
        name: "gap",
        pass: gap.passes(),
        detail: format!(
            "max gap {:.6e} over {} data, {:.2}% above allowance",
            gap.max_gap,
            gap.rows.len(),
            gap.over_fraction * 100.0
        ),
    });

    let pipeline = grid_pipeline(config, &rates, &family)?;
    let grid_u = pipeline.solve_plain(&rates)?;
    let grid_v = pipeline.solve_transformed(&rates)?;
    grid_u.write_binary(create(&out.join("grid_u.bin"))?)?;
    grid_u.write_slice_csv(0, create(&out.join("grid_u_t0.csv"))?)?;

    let (dx, dy, dt) = grid_u.spacings();
    let budget = 5.0 * (dx + dy + dt);
    let mut sup = 0.0f64;
    for it in 0..grid_u.t_nodes().len() {
        for (u, v) in grid_u.slice_values(it).iter().zip(grid_v.slice_values(it)) {
            sup = sup.max((u + v.ln()).abs());
        }
    }
    checks.push(CheckLine {
        name: "transform",
        pass: sup <= budget,
        detail: format!("sup |u + ln v| = {sup:.6e}, budget {budget:.6e}"),
    });

    let residual = residual_check(&grid_u, &rates)?;
    residual.write_csv(create(&out.join("residual.csv"))?)?;
    residual.write_summary(create(&out.join("residual.txt"))?)?;
    checks.push(CheckLine {
        name: "residual",
        pass: residual.max_abs.is_finite() && residual.skipped_fraction < 1.0,
        detail: format!(
            "max |r| = {:.6e}, per-spacing constant {:.4}, kept {}",
            residual.max_abs, residual.c_res, residual.kept
        ),
    });

    // Probe step: two cells of the coarsest axis, shrunk when the box
    // margins cannot fit the feet.
    let y_lo = pipeline.mu_b;
    let spec = &pipeline.spec;
    let t_span = config.grid.t_span;
    let margin = (0.19 * spec.x_max)
        .min(0.19 * (spec.y_max - y_lo))
        .min(0.19 * t_span);
    let h = (2.0 * dx.max(dy).max(dt)).min(margin);
    let k = ProbeBox {
        x: (0.2 * spec.x_max, 0.6 * spec.x_max),
        y: (y_lo + 0.2 * (spec.y_max - y_lo), y_lo + 0.6 * (spec.y_max - y_lo)),
        t: (0.2 * t_span, 0.7 * t_span),
    };
    let semi = semiconcavity_probe(&grid_u, &k, h)?;
    semi.write_csv(create(&out.join("semiconcavity.csv"))?)?;
    semi.write_summary(create(&out.join("semiconcavity.txt"))?)?;
    checks.push(CheckLine {
        name: "semiconcavity",
        pass: semi.c.is_finite(),
        detail: format!("c = {:.6e} at h = {:.4e} over {} probes", semi.c, semi.h, semi.probes),
    });

    let stability =
        stability_check(&rates, &alpha, &datum, config.horizon, &STABILITY_DELTAS)?;
    stability.write_csv(create(&out.join("stability.csv"))?)?;
    stability.write_summary(create(&out.join("stability.txt"))?)?;
    checks.push(CheckLine {
        name: "stability",
        pass: stability.is_decreasing(),
        detail: format!(
            "sup distances {:?}",
            stability.rows.iter().map(|r| r.sup_distance).collect::<Vec<_>>()
        ),
    });

    let probes: Vec<(f64, f64, f64)> =
        config.probes.iter().map(|p| (p.x, p.y, p.t)).collect();
    // The certificate only gates thresholds it actually covers.
    let cert_ref = (mu <= cert.mu1).then_some(&cert);
    let discrepancy = hjb_vs_trajectory(&grid_u, &probes, &rates, mu, &family, cert_ref)?;
    discrepancy.write_csv(create(&out.join("discrepancy.csv"))?)?;
    discrepancy.write_summary(create(&out.join("discrepancy.txt"))?)?;
    let bar = config.tolerances.max_discrepancy.unwrap_or(DEFAULT_DISCREPANCY);
    checks.push(CheckLine {
        name: "discrepancy",
        pass: discrepancy.max_discrepancy <= bar,
        detail: format!(
            "max |grid - optimizer| = {:.6e}, bar {bar:.6e}",
            discrepancy.max_discrepancy
        ),
    });

    let all_pass = checks.iter().all(|c| c.pass);
    let mut summary = create(&out.join("verify.txt"))?;
    writeln!(summary, "schedule digest: {}", grid_u.digest())?;
    for c in &checks {
        let line = format!(
            "check {}: {} ({})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
        writeln!(summary, "{line}")?;
        println!("{line}");
    }
    writeln!(summary, "overall: {}", if all_pass { "PASS" } else { "FAIL" })?;
    if all_pass {
        println!("overall: PASS");
        Ok(())
    } else {
        let failed: Vec<&str> =
            checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        Err(Error::domain(format!("verification failed: {}", failed.join(", "))))
    }
}
