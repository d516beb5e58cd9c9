//! Estimation, recovery and forecasting for sparsely and noisily observed
//! functional time series.
//!
//! The pipeline estimates the mean function, lag-`h` autocovariance kernels
//! and the measurement-error variance by kernel smoothing, combines lagged
//! covariances into a smoothed spectral density operator, and recovers or
//! forecasts latent curves by best linear unbiased prediction with
//! pointwise and simultaneous confidence bands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod quadrature;
pub mod recovery;
pub mod smoothing;
pub mod simulate;
pub mod spectral;
pub mod tuning;

pub use basis::{Curve, SplineSpace, Surface};
pub use dataset::{DomainMetric, Observation, SparseFtsDataset};
pub use error::{Error, Result};
pub use par::Parallelism;
