//! Steady-state thermodynamics of a three-level absorption machine coupled to
//! a ring of qubits in a two-temperature electromagnetic environment.

// `!(x > y)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod correlations;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod thermodynamics;

pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};
