//! State estimation toolkit for hybrid AC/DC distribution grids.
//!
//! The crate covers the whole experimental chain:
//!
//! * [`grid`]: network model, region partition and grid files;
//! * [`powerflow`]: sequential AC/DC power flow used as ground truth;
//! * [`telemetry`]: measurement functions (nonlinear and linearized),
//!   noise synthesis and bad-data injection;
//! * [`estimation`]: weighted least squares, the largest normalized
//!   residual test, and weighted least absolute value estimation solved as
//!   a linear program;
//! * [`coordination`]: the distributed estimation loop exchanging converter
//!   boundary packets between regions, plus distributed and centralized
//!   WLS baselines;
//! * [`injection`]: load profile synthesis, Gaussian mixture fitting and the
//!   neural-network injection model;
//! * [`bench`]: metrics, scenarios and the Monte-Carlo harness.

pub mod bench;
pub mod coordination;
pub mod error;
pub mod estimation;
pub mod grid;
pub mod injection;
pub mod physics;
pub mod powerflow;
pub mod seed;
pub mod telemetry;

pub use error::{Error, Result};
