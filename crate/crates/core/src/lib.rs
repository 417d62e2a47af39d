//! Joint Bayesian inference of ODE parameters and discretization-error
//! variances with particle filters.
//!
//! The discretization error of an explicit Euler solution is modelled as a
//! zero-mean Gaussian whose componentwise standard deviations follow a
//! Markov prior driven by estimated local errors. This turns error
//! quantification into filtering on a state-space model, and joint
//! inference with the ODE parameters into a self-organizing state-space
//! model.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod error_prior;
pub mod harness;
pub mod joint;
pub mod models;
pub mod observation;
pub mod ode;
pub mod particle;
pub mod rng;
pub mod stats;
pub mod tune;

pub use error::{Error, Result};
