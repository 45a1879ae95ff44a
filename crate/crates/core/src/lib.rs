//! Covariate-adjusted functional profile monitoring.
//!
//! The pipeline treats each day's sensor trace as a curve on the clock
//! domain (0h, 24h]. A training phase fits, per monitored output, a
//! function-on-function model
//!
//! ```text
//! u(t) = alpha(t) + f(z(t)) + E(t)
//! ```
//!
//! with a cyclic spline intercept `alpha`, a penalized spline covariate
//! effect `f`, and a day-specific error process `E`. Functional principal
//! component analysis of the residual process splits `E` into a low-rank
//! structural part plus white noise; daily component scores are then
//! estimated for new data by their conditional expectation and monitored
//! with an ARL-calibrated multivariate EWMA chart.
//!
//! Modules mirror the pipeline stages: [`ingest`] (raw records to daily
//! profiles), [`smooth`] (spline bases and penalized least squares),
//! [`phase1`] (the two-step training fit), [`fpca`] (residual covariance
//! and eigenfunctions), [`scores`] (daily score estimation), [`chart`]
//! (MEWMA recursion, run-length computation, threshold calibration), and
//! [`simulate`] (synthetic data generation for end-to-end checks).
//!
//! The `parallel` feature (on by default) runs the data-parallel inner
//! loops — Monte Carlo run lengths, per-output fits, per-day scores —
//! on a rayon pool; without it the same code runs sequentially and
//! produces identical output.

pub mod chart;
pub mod fpca;
pub mod grid;
pub mod ingest;
pub(crate) mod par;
pub mod phase1;
pub mod scores;
pub mod simulate;
pub mod smooth;
pub mod svg;
