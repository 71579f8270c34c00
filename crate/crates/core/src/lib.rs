//! Spatio-temporal differential dynamic programming for optimal control of
//! one-dimensional PDEs: value-functional backward pass, gain synthesis, an
//! iterative solver with annealing, an LQR-of-fields reference and oracles.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod config;
pub mod cost;
pub mod error;
pub mod gains;
pub mod grid;
pub mod io;
pub mod lqr;
pub mod models;
pub mod oracle;
pub mod solver;
pub mod trajectory;
pub mod verify;

pub use error::{Result, StddpError};
