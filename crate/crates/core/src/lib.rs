//! Sparse index tracking with the Lasso, followed by exact post-selection
//! inference on the selected constituents.
//!
//! The flow mirrors the CLI: [`ingest`] turns a long-format price CSV into
//! returns, [`inference`] fits the Lasso and runs truncated-Gaussian tests
//! on every selected coefficient, and [`tracking`] scores the resulting
//! basket against the benchmark. [`experiment`] wires these into single
//! runs, parameter sweeps and Monte Carlo calibration.

// NaN must fail parameter checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod ingest;
pub mod lasso;
pub mod linalg;
pub mod polyhedron;
pub mod serde_ext;
pub mod tracking;
pub mod truncnorm;

pub use error::{Error, Result};
