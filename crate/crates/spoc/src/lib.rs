//! Solvers and experiment tooling for a distributed optimal control problem
//! constrained by a one-dimensional stochastic heat equation with
//! multiplicative noise.
//!
//! The state equation is discretized with continuous piecewise-linear finite
//! elements in space and backward Euler in time. The driving Brownian motion
//! comes in two flavors: an exact binomial-tree filtration, on which
//! conditional expectations are plain child averages and the discrete
//! integration-by-parts identities hold to machine precision, and a seeded
//! Gaussian path ensemble for Monte Carlo strong-rate studies. On top of the
//! forward and backward solvers sits a box-constrained control optimizer and
//! a study harness that measures observed convergence orders and writes
//! reproducible reports.

pub mod backward;
pub mod control;
pub mod error;
pub mod fem;
pub mod forward;
pub mod identities;
pub mod noise;
pub mod quadrature;
pub mod source;
pub mod study;

pub use error::{Error, Result};
