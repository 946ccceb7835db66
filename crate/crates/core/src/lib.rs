//! Monte Carlo simulation of isolation and detection times for a target
//! among Poisson Brownian motions.
//!
//! The crate is organised bottom up: [`geom`] and [`rng`] provide points,
//! shapes and deterministic random streams; [`model`] holds the shared
//! configuration; [`pointprocess`] samples Poisson clouds and truncates the
//! infinite process; [`paths`] generates Brownian trajectories with sound
//! segment verdicts; [`events`] turns worlds of moving nodes into censored
//! event times; [`estimators`] and [`analysis`] build survival curves, rare-
//! event estimates and the experiment-level checks on top.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod events;
pub mod geom;
pub mod model;
pub mod paths;
pub mod pointprocess;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
