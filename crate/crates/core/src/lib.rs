//! Numerical lab for nonlocal evolution problems driven by discrete
//! fractional p(x,y)-Laplacians and their large-exponent limits.

// `!(x > 0.0)` style guards are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod energy;
pub mod error;
pub mod fields;
pub mod flow;
pub mod grid;
pub mod harness;
pub mod limits;
pub mod sum;
pub mod vnorm;

pub use error::{LabError, Result};
