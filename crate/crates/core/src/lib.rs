//! Multivariate time series forecasting with learned dependency graphs.
//!
//! The crate learns an inter-series dependency structure from raw
//! multivariate data using seven statistical estimators, fuses and
//! sparsifies the per-method matrices into a static adjacency plus a
//! binary support mask, optionally re-weights the structure per time
//! step with masked convolutional attention, and trains a
//! spatio-temporal network of interleaved dilated temporal convolutions
//! and mix-hop graph convolutions for single-step forecasting.
//! Forecasts are scored with root relative squared error (RSE) and mean
//! per-series correlation (CORR).

pub mod data;
pub mod error;
mod linalg;
pub mod structure;

pub use error::{Error, Result};
