// NaN-rejecting comparisons like `!(x > 0.0)` are intentional throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]
#![allow(clippy::needless_range_loop)]
#![cfg_attr(test, allow(clippy::approx_constant))]

pub mod analytic;
pub mod environment;
pub mod error;
pub mod harness;
pub mod ibm;
pub mod ide;
pub mod moments;
pub mod numerics;

pub use error::{Error, Result};
