//! Synthetic generalized long-tail benchmarks.
//!
//! The crate generates data with both class-wise and attribute-wise long
//! tails, builds the CLT / ALT / GLT train-test protocols, trains small
//! feedforward classifiers with invariant feature learning and the usual
//! re-balancing baselines, and reports stratified accuracy and precision.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod ifl;
pub mod nn;
pub mod repro;
pub mod rng;
pub mod splits;

pub use error::{Error, Result};
