//! Executable robustness criteria for feature-attribution explanations.
//!
//! A run establishes, for every explanation method in a pool, whether the
//! method is robust on its own (similar targets get similar explanations,
//! distinct targets get distinct ones), and then whether the methods that
//! pass agree with each other on the same targets without agreeing blindly.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod datasets;
pub mod error;
pub mod explainers;
pub mod metrics;
pub mod harness;
pub mod model;
pub mod scenarios;
pub mod seeds;

pub use error::{Error, Result};
