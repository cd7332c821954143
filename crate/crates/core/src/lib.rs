//! Sample-splitting least squares (SSLS) for groupwise average treatment
//! effects.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod clustering;
pub mod crossfit;
pub mod data;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod learners;
pub mod linalg;
pub mod report;
pub mod rng;
pub mod simulation;
pub mod transformed_ls;

pub use error::{Error, Result};
