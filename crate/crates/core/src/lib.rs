//! Long-term multivariate forecasting with a Haar wavelet pyramid,
//! per-scale dual-path (linear + patch mixer) forecasters and adaptive
//! per-channel multi-scale fusion.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod model;
pub mod normalization;
pub mod tensor;
pub mod training;
pub mod wavelet;
