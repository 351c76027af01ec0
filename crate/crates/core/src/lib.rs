//! Deep recurrent Gaussian processes with (variational) sparse-spectrum kernel approximations.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod bound;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod psi;
mod serde_mat;
pub mod simulate;
pub mod trainer;
pub mod transform;
pub mod validate;

pub use error::{Error, Result};
