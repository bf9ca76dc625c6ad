//! Two-stage marine glacier model, stochastic ensemble Kalman filter twin
//! experiments, and grounding-line sea-level post-processing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod cli;
pub mod config;
pub mod enkf;
pub mod error;
pub mod experiments;
pub mod model;
pub mod osse;
pub mod rng;
pub mod slr;

pub use error::{Error, Result};
