//! Greedy design of control inputs and identification of the nonlinearity in
//! a coupled two-component semilinear elliptic system.

// Negated float comparisons deliberately reject NaN in validation checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod artifact;
pub mod config;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod gradcheck;
pub mod greedy;
pub mod grid;
pub mod nonlinearity;
pub mod objectives;
pub mod optimizer;
pub mod seeds;

pub use error::{Error, Result};
