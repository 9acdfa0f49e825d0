//! Portfolio optimization on generated future price scenarios.
//!
//! The pipeline has three stages:
//!
//! * [`pdg`] turns a price history plus per-asset return targets into a future
//!   price path with the same daily-return covariance;
//! * [`qubo`] and [`solver`] encode the budgeted mean-variance problem as a
//!   binary quadratic model and minimize it;
//! * [`aur`] runs the solver several times, shrinks the asset universe to the
//!   assets that were ever allocated, and solves the reduced problem.
//!
//! [`portfolio`] interprets solutions, [`report`] and [`config`] handle the
//! run-level plumbing used by the `q4fp` command-line tool.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aur;
pub mod config;
pub mod error;
pub mod market_data;
pub mod pdg;
pub mod portfolio;
pub mod qubo;
pub mod report;
pub mod rng;
pub mod solver;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
