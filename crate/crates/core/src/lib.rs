//! Stochastic simulation of a degenerate optical parametric oscillator (DOPO)
//! and reconstruction of intracavity Husimi Q functions from bias-probability
//! curves.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`sde`] integrates the quadrature dynamics under pump and bias schedules.
//! 2. [`protocol`] prepares states and measures steady-state probabilities
//!    while sweeping bias, tomography angle and injection delay.
//! 3. [`reconstruct`] fits erf curves, turns their slopes into marginal Q
//!    functions and inverts the Radon transform.
//! 4. [`io`] reads configuration, writes CSV outputs and run manifests.
//!
//! [`model`] holds the closed-form references the simulation is checked against.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod io;
pub mod model;
pub mod protocol;
pub mod reconstruct;
pub mod sde;
