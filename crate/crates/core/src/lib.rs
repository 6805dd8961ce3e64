//! Passively safe impulsive rendezvous design.
//!
//! The crate plans fuel- or time-optimal impulsive trajectories in
//! Clohessy-Wiltshire relative motion whose free-drift continuations stay
//! clear of a keep-out sphere under navigation, delivery and maneuver
//! execution dispersions. Trajectories are found by successive
//! convexification over second-order cone subproblems ([`scp`]); the
//! dispersions come from a closed-loop linear covariance / Monte Carlo
//! engine ([`uq`]).

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conic;
pub mod dynamics;
mod error;
pub mod linalg;
pub mod scp;
pub mod stochastics;
pub mod uq;

pub use error::{Error, Result};
