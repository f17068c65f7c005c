//! Long-horizon time-series forecasting driven by global autocorrelation.
//!
//! The crate couples a contrastive objective — window representations are
//! pulled together or pushed apart according to the absolute global
//! autocorrelation at the lag separating the windows — with a two-branch
//! decomposition forecaster: a linear map for short-term structure and a
//! dilated-convolution encoder with a multi-scale moving-average decoder for
//! long-term structure. Everything runs on a small deterministic reverse-mode
//! tensor engine whose gradients are checkable against finite differences.

pub mod acf;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
