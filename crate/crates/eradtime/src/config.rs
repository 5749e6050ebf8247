//! Experiment configuration: one JSON file fully determines any run.
//!
//! The schema is nested: a rate schedule with its certified bounds, the
//! two thresholds, grid geometry, the control family, ensemble size and
//! seed, a reference datum and control for single-trajectory commands,
//! probe points for the grid-versus-optimizer comparison, the output
//! directory, and optional tolerance overrides. Parsing rejects unknown
//! fields, and semantic validation reports violations with dotted field
//! paths. Identical configs (and seeds) produce byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hjb::GridSpec;
use crate::optimize::{enumerate_bangbang, ControlFamily};
use crate::rates::{ControlSignal, RateKind, RateSchedule, Sinusoid};
use crate::Result;

/// Rate schedule plus the certified bounds it must respect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub curve: RateKind,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
}

impl ScheduleConfig {
    /// Builds the validated schedule (bounds are re-checked against the
    /// curve, not trusted).
    pub fn to_rates(&self) -> Result<RateSchedule> {
        RateSchedule::new(
            self.curve.clone(),
            self.beta_lo,
            self.beta_hi,
            self.gamma_lo,
            self.gamma_hi,
        )
    }
}

/// Eradication target `mu` and band floor `mu0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub mu0: f64,
    pub mu: f64,
}

/// Which threshold the grid's lower face sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaceLevel {
    /// Face at `mu`: slice values are plain times-to-`mu`, zero data on
    /// the absorbing strip.
    Mu,
    /// Face at `mu0`: the boundary-value formulation with trajectory-layer
    /// face traces; accurate when `mu` is far below the grid resolution.
    Mu0,
}

/// Grid geometry and boundary-sampling resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_max: f64,
    pub nx: usize,
    pub y_max: f64,
    pub ny: usize,
    pub t_span: f64,
    pub nt: usize,
    pub face: FaceLevel,
    /// Spatial samples per boundary table axis.
    #[serde(default = "default_face_samples")]
    pub face_samples: usize,
    /// Time samples per boundary table.
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
}

fn default_face_samples() -> usize {
    16
}

fn default_time_samples() -> usize {
    6
}

impl GridConfig {
    pub fn to_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.x_max, self.nx, self.y_max, self.ny)
    }
}

/// Bang-bang control family for the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub horizon: f64,
    pub intervals: usize,
}

impl FamilyConfig {
    pub fn to_family(&self) -> Result<ControlFamily> {
        enumerate_bangbang(self.horizon, self.intervals)
    }
}

/// Random-ensemble shape for gap studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub size: usize,
    pub seed: u64,
}

/// A single initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumConfig {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

/// A step control as breakpoint/value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl ControlConfig {
    pub fn to_signal(&self) -> Result<ControlSignal> {
        ControlSignal::new(self.breakpoints.clone(), self.values.clone())
    }
}

/// Optional numeric overrides; `None` takes each solver's default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    /// Stationary value-iteration stopping tolerance.
    pub tol_vi: Option<f64>,
    /// Pass bar for the grid-versus-optimizer discrepancy check.
    pub max_discrepancy: Option<f64>,
}

/// Everything a run needs, in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: ScheduleConfig,
    pub thresholds: ThresholdConfig,
    pub grid: GridConfig,
    pub family: FamilyConfig,
    pub ensemble: EnsembleConfig,
    pub datum: DatumConfig,
    pub control: ControlConfig,
    /// Plain-flow horizon for the simulate and stability commands.
    pub horizon: f64,
    /// Interior probe points for the grid-versus-optimizer comparison.
    pub probes: Vec<DatumConfig>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize: {e}")))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Semantic checks beyond the schema; messages carry field paths.
    pub fn validate(&self) -> Result<()> {
        let rates = self
            .schedule
            .to_rates()
            .map_err(|e| Error::Config(format!("schedule: {e}")))?;
        let t = &self.thresholds;
        if !(t.mu > 0.0 && t.mu <= t.mu0) {
            return Err(Error::Config(format!(
                "thresholds: need 0 < mu <= mu0; got mu = {}, mu0 = {}",
                t.mu, t.mu0
            )));
        }
        self.grid.to_spec().map_err(|e| Error::Config(format!("grid: {e}")))?;
        let x_need = rates.x_hi();
        if self.grid.x_max < x_need {
            return Err(Error::Config(format!(
                "grid.x_max: {} does not cover the band ceiling gamma_hi/beta_lo = {x_need}",
                self.grid.x_max
            )));
        }
        let mu_b = self.mu_b();
        if mu_b >= self.grid.y_max {
            return Err(Error::Config(format!(
                "grid.y_max: {} must exceed the lower face {mu_b}",
                self.grid.y_max
            )));
        }
        if !(self.grid.t_span > 0.0 && self.grid.nt >= 2) {
            return Err(Error::Config(format!(
                "grid: need t_span > 0 and nt >= 2; got t_span = {}, nt = {}",
                self.grid.t_span, self.grid.nt
            )));
        }
        if self.grid.face_samples < 2 || self.grid.time_samples < 2 {
            return Err(Error::Config(format!(
                "grid: boundary tables need at least 2 samples per axis; got \
                 face_samples = {}, time_samples = {}",
                self.grid.face_samples, self.grid.time_samples
            )));
        }
        if self.ensemble.size == 0 {
            return Err(Error::Config("ensemble.size: must be positive".into()));
        }
        if !(self.datum.x >= 0.0 && self.datum.y > 0.0 && self.datum.t >= 0.0) {
            return Err(Error::Config(format!(
                "datum: need x >= 0, y > 0, t >= 0; got ({}, {}, {})",
                self.datum.x, self.datum.y, self.datum.t
            )));
        }
        self.control.to_signal().map_err(|e| Error::Config(format!("control: {e}")))?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon: must be positive; got {}", self.horizon)));
        }
        self.family.to_family().map_err(|e| Error::Config(format!("family: {e}")))?;
        for (i, p) in self.probes.iter().enumerate() {
            let inside = p.x > 0.0
                && p.x < self.grid.x_max
                && p.y > mu_b
                && p.y < self.grid.y_max
                && p.t >= 0.0
                && p.t <= self.grid.t_span;
            if !inside {
                return Err(Error::Config(format!(
                    "probes[{i}]: ({}, {}, {}) not interior to the grid box",
                    p.x, p.y, p.t
                )));
            }
        }
        if let Some(tol) = self.tolerances.tol_vi {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::Config(format!(
                    "tolerances.tol_vi: must be positive; got {tol}"
                )));
            }
        }
        if let Some(d) = self.tolerances.max_discrepancy {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!(
                    "tolerances.max_discrepancy: must be positive; got {d}"
                )));
            }
        }
        Ok(())
    }

    /// The grid's lower-face height under the configured convention.
    pub fn mu_b(&self) -> f64 {
        match self.grid.face {
            FaceLevel::Mu => self.thresholds.mu,
            FaceLevel::Mu0 => self.thresholds.mu0,
        }
    }

    /// Constant rates, best for analytic anchors: the band collapses to a
    /// point, the exit time is zero, and the safe threshold is `mu0 / 2`.
    pub fn scenario_a() -> Self {
        ExperimentConfig {
            schedule: ScheduleConfig {
                curve: RateKind::Constant { beta: 0.5, gamma: 0.2 },
                beta_lo: 0.5,
                beta_hi: 0.5,
                gamma_lo: 0.2,
                gamma_hi: 0.2,
            },
            thresholds: ThresholdConfig { mu0: 0.1, mu: 0.01 },
            grid: GridConfig {
                x_max: 0.8,
                nx: 33,
                y_max: 0.4,
                ny: 40,
                t_span: 2.0,
                nt: 11,
                face: FaceLevel::Mu,
                face_samples: 16,
                time_samples: 6,
            },
            family: FamilyConfig { horizon: 48.0, intervals: 4 },
            ensemble: EnsembleConfig { size: 500, seed: 42 },
            datum: DatumConfig { x: 0.6, y: 0.3, t: 0.0 },
            control: ControlConfig { breakpoints: vec![], values: vec![0.0] },
            horizon: 30.0,
            probes: vec![
                DatumConfig { x: 0.2, y: 0.2, t: 0.5 },
                DatumConfig { x: 0.4, y: 0.1, t: 1.0 },
            ],
            output_dir: PathBuf::from("out/scenario-a"),
            tolerances: ToleranceConfig::default(),
        }
    }

    /// Oscillating recovery rate with a wide band: the two eradication
    /// times genuinely differ at lax thresholds, and the schedule never
    /// freezes, so grid commands refuse it.
    pub fn scenario_b() -> Self {
        ExperimentConfig {
            schedule: ScheduleConfig {
                curve: RateKind::Sinusoidal {
                    beta: Sinusoid { base: 0.4, amp: 0.0, freq: 1.0, phase: 0.0 },
                    gamma: Sinusoid { base: 0.3, amp: 0.2, freq: 1.0, phase: 0.0 },
                },
                beta_lo: 0.4,
                beta_hi: 0.4,
                gamma_lo: 0.1,
                gamma_hi: 0.5,
            },
            thresholds: ThresholdConfig { mu0: 0.1, mu: 0.04 },
            grid: GridConfig {
                x_max: 1.5,
                nx: 31,
                y_max: 0.6,
                ny: 26,
                t_span: std::f64::consts::LN_10,
                nt: 13,
                face: FaceLevel::Mu0,
                face_samples: 16,
                time_samples: 6,
            },
            family: FamilyConfig { horizon: 64.0, intervals: 4 },
            ensemble: EnsembleConfig { size: 1000, seed: 2026 },
            datum: DatumConfig { x: 1.0, y: 0.05, t: 0.0 },
            control: ControlConfig { breakpoints: vec![], values: vec![0.0] },
            horizon: 40.0,
            probes: vec![],
            output_dir: PathBuf::from("out/scenario-b"),
            tolerances: ToleranceConfig::default(),
        }
    }

    /// The oscillating schedule frozen once the regularity window opens:
    /// every layer applies, so this is the end-to-end verification target.
    pub fn scenario_c() -> Self {
        ExperimentConfig {
            schedule: ScheduleConfig {
                curve: RateKind::FrozenAfter {
                    base: Box::new(RateKind::Sinusoidal {
                        beta: Sinusoid { base: 0.4, amp: 0.0, freq: 1.0, phase: 0.0 },
                        gamma: Sinusoid { base: 0.3, amp: 0.2, freq: 1.0, phase: 0.0 },
                    }),
                    t_freeze: std::f64::consts::LN_10,
                    beta0: 0.4,
                    gamma0: 0.3,
                    ramp: 1e-3,
                },
                beta_lo: 0.4,
                beta_hi: 0.4,
                gamma_lo: 0.3,
                gamma_hi: 0.5,
            },
            thresholds: ThresholdConfig { mu0: 0.1, mu: 0.01 },
            grid: GridConfig {
                x_max: 1.5,
                nx: 61,
                y_max: 0.6,
                ny: 81,
                t_span: 2.35,
                nt: 95,
                face: FaceLevel::Mu0,
                face_samples: 16,
                time_samples: 6,
            },
            family: FamilyConfig { horizon: 64.0, intervals: 4 },
            ensemble: EnsembleConfig { size: 200, seed: 7 },
            datum: DatumConfig { x: 0.6, y: 0.15, t: 0.0 },
            control: ControlConfig { breakpoints: vec![], values: vec![0.0] },
            horizon: 30.0,
            probes: vec![
                DatumConfig { x: 0.3, y: 0.2, t: 0.3 },
                DatumConfig { x: 0.6, y: 0.15, t: 0.0 },
                DatumConfig { x: 0.6, y: 0.3, t: 1.0 },
                DatumConfig { x: 0.9, y: 0.2, t: 1.0 },
                DatumConfig { x: 0.9, y: 0.4, t: 0.5 },
                DatumConfig { x: 1.2, y: 0.25, t: 1.5 },
                DatumConfig { x: 0.45, y: 0.5, t: 2.0 },
                DatumConfig { x: 1.0, y: 0.15, t: 0.8 },
            ],
            output_dir: PathBuf::from("out/scenario-c"),
            tolerances: ToleranceConfig { tol_vi: None, max_discrepancy: Some(0.25) },
        }
    }
}
