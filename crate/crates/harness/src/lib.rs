//! Configuration and experiment runner for the `mace` command-line tool.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{RunConfig, RunMode};
