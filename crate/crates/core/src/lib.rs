//! Tall/short crop mapping from sparse lidar crop heights and optical time series.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cells;
pub mod config;
pub mod error;
pub mod eval;
pub mod forest;
pub mod gedi;
pub mod grid;
pub mod harmonics;
pub mod height;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
