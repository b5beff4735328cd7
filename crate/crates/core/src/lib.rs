//! Changepoint detection and stabilization analysis for bounded performance
//! metric streams.
//!
//! The crate provides two families of tools:
//!
//! * **Stabilization**: how many observations a rate metric needs before the
//!   observed value carries more signal than noise, plus anytime-valid
//!   Hoeffding confidence intervals for bounded metrics.
//! * **Changepoint detection**: likelihood-ratio candidate search combined
//!   with split-sample hypothesis testing (Fisher's exact test for binary
//!   streams, shift-parameter permutation tests for continuous ones), and
//!   binary segmentation for multiple changes.
//!
//! Everything downstream of a seed is deterministic: the same inputs and the
//! same seed give bitwise-identical results, serial or parallel.

pub mod cli;
pub mod detect;
pub mod error;
pub mod hypotests;
pub mod ingest;
pub mod loglik;
pub mod seed;
pub mod series;
pub mod simgen;
pub mod stabilization;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
