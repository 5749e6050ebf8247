//! Error type shared by all solver layers.

use thiserror::Error;

/// Unified error for construction, integration, and solver failures.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented domain restriction.
    #[error("domain error: {0}")]
    Domain(String),

    /// A rate schedule left its certified bounds or broke continuity.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// The integrator step is too large for the local speed bound.
    #[error("step {h} too large for speed bound {bound}; use h <= {suggested}")]
    StepTooLarge { h: f64, bound: f64, suggested: f64 },

    /// A trajectory broke an invariant (positivity, monotone S, decay floor).
    #[error("integration error: {0}")]
    Integration(String),

    /// A search exceeded its horizon cap without meeting its exit condition.
    #[error("no termination before t = {cap}: {context}")]
    NonTermination { cap: f64, context: String },

    /// A control family would be too large to enumerate.
    #[error("bang-bang family with {n} intervals has 2^{n} members; cap is {cap}")]
    FamilyTooLarge { n: usize, cap: usize },

    /// Value iteration failed to converge; carries the recent residuals.
    #[error("value iteration did not converge in {sweeps} sweeps; last residuals {trace:?}")]
    NoConvergence { sweeps: usize, trace: Vec<f64> },

    /// A grid operation hit a CFL violation or an out-of-box foot point.
    #[error("grid error: {0}")]
    Grid(String),

    /// Config file could not be read or failed schema validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
