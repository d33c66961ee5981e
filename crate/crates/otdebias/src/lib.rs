//! Optimal-transport bias correction for photometric redshift catalogs,
//! plus the numerical kernels of a compact directional-wavelet / selective
//! state-space feature extractor.
//!
//! The crate is organized around desk-scale, oracle-checked numerics:
//!
//! - [`tensor`] / [`rng`]: dense `f64` arrays, the `NDT1` file format, and a
//!   counter-based deterministic generator.
//! - [`wavelet`]: oriented Gabor bank, dual-tree directional decomposition,
//!   and the fixed 8x8 feature bottleneck.
//! - [`ssm`]: selective state-space recurrence, stable discretization,
//!   4-direction grid scans, gated aggregation.
//! - [`encoding`]: sinusoidal coordinate encoding and the 2x2 task-relation
//!   matrix.
//! - [`transport`]: histograms, log-domain Sinkhorn, Hellinger term, the
//!   Hellinger-Kantorovich distance, and its differentiable training loss.
//! - [`losses`] / [`schedule`]: focal, color-weighted redshift, VIB/LSI
//!   regularizers, the unified objective, and the warmup-cosine learning-rate
//!   schedule with the HK curriculum.
//! - [`metrics`]: catalog evaluation (log-MSE, bias, outlier rate, per-bin
//!   breakdowns, improvement percentages, coefficient of variation).
//! - [`biaslab`]: synthetic selection-function simulator and HK-based
//!   distribution recovery.
//! - [`catalog`] / [`galaxy`] / [`cli`]: CSV ingestion, synthetic galaxy
//!   rendering, and the command-line front end.
//! - [`selftest`]: the executable example corpus with its independent oracles.
//!
//! See the crate `examples/` directory for one runnable walkthrough per
//! capability; `otdebias selftest` replays the full example corpus.

pub mod biaslab;
pub mod catalog;
pub mod cli;
pub mod encoding;
pub mod error;
pub mod galaxy;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod selftest;
pub mod ssm;
pub mod tensor;
pub mod transport;
pub mod wavelet;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
