//! Learning the distribution of a hidden discrete random variable from
//! sequential, indirect observations.
//!
//! Each "arm" is a known deterministic function of the hidden symbol. Pulling
//! an arm draws a fresh symbol and reveals only the arm's output. The crate
//! covers identifiability analysis, redundant-arm elimination, pseudoinverse
//! and smoothed maximum-likelihood estimators, Cramér-Rao style error bounds,
//! adaptive pulling policies and a seeded Monte Carlo harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod model;
pub mod policies;
pub mod sim;
pub mod structure;

pub use error::{Error, Result};
pub use model::{build_matrices, output_probabilities, parse_problem_spec, ProblemSpec, SampleGenerationMatrix};
