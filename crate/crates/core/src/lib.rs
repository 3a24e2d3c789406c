//! Smart-meter load disaggregation and consumer utility modeling.
//!
//! The pipeline splits a minute-resolution household load into a shiftable
//! component (discrete, intermittently used appliances) and a fixed component
//! (always-on, smooth consumption), then fits a semi-parametric log
//! Cobb-Douglas utility model to the split loads:
//!
//! 1. [`disagg::run_hybrid`] alternates a Gaussian mixture trained by EM
//!    ([`gmm`]) with an orthonormal non-negative matrix factorization ([`nmf`]).
//! 2. [`model::fit`] assembles an ε-insensitive, L2-regularized quadratic
//!    program over the period totals and solves it with [`qp::solve`].
//! 3. [`synth`] generates households with appliance-level ground truth and
//!    scores both stages against it.
//!
//! File formats and run configuration live in [`io`].

// `!(x > 0.0)` is used on purpose so that NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod disagg;
pub mod error;
pub mod gmm;
pub mod io;
pub mod model;
pub mod nmf;
pub mod qp;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{CostVector, LoadMatrix, LoadRole, TemperatureMatrix, TimeGrid};
