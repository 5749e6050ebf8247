//! Minimum eradication times for a controlled SIR model with time-varying
//! rates.
//!
//! The system under study is
//!
//! ```text
//!     S'(s) = -beta(t0+s) S I - alpha(s) S
//!     I'(s) =  beta(t0+s) S I - gamma(t0+s) I
//! ```
//!
//! where `alpha: [0,inf) -> [0,1]` is a vaccination control and the rates
//! `beta`, `gamma` are continuous and bounded between certified constants.
//! Given a threshold `mu > 0`, two eradication times are attached to each
//! datum `(x, y, t0, alpha)`:
//!
//! * the upper time: the last instant at which `I >= mu`,
//! * the lower time: the first entry into a sub-`mu` era.
//!
//! The two can differ when `I` oscillates around `mu`; below the certified
//! safe threshold `mu1` they provably coincide. The crate computes both
//! times by trajectory integration ([`eradication`]), certifies `mu1`
//! constructively ([`threshold`]), minimizes over bang-bang control
//! families ([`optimize`]), solves the associated Hamilton-Jacobi-Bellman
//! equation on a grid in both the plain and the exponentially transformed
//! form ([`hjb`]), and cross-checks all layers against each other and
//! against analytic special cases ([`verify`]).
//!
//! Everything is deterministic: fixed-step integration, seeded ensembles,
//! Jacobi value-iteration sweeps, and sorted report keys. Running the same
//! experiment configuration twice produces byte-identical outputs.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod eradication;
pub mod error;
pub mod hjb;
pub mod optimize;
pub mod rates;
pub mod report;
pub mod threshold;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
