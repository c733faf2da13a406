//! Impulse control with a fixed execution delay, where the size of each
//! impulse is chosen when it executes.
//!
//! * [`lattice_rn`], [`lattice_rs`]: exact finite-horizon solvers on a
//!   finite-state Markov model (risk-neutral and exponential utility).
//! * [`infinite_rn`]: discounted infinite horizon by monotone iteration on
//!   a truncated grid.
//! * [`lsmc`]: regression Monte Carlo on simulated paths.
//! * [`oracle`]: brute-force references used to validate the solvers.
//! * [`swing`]: swing-option preset.
//! * [`config`], [`report`], [`verify`]: files and checks behind the
//!   `delay-impulse` command-line tool.

pub mod config;
pub mod error;
pub mod fixtures;
pub mod infinite_rn;
pub mod lattice_rn;
pub mod lattice_rs;
pub mod lsmc;
pub mod model;
pub mod oracle;
pub mod report;
pub mod scheme;
pub mod strategy;
pub mod swing;
pub mod verify;

pub use error::{Error, Result};
