//! Per-scale dual-path forecaster and adaptive multi-scale fusion.

mod config;
mod forward;
mod params;

pub use config::{ConfigError, ModelConfig, ScaleGeometry};
pub use forward::{
    from_rows, fuse, global_path, local_path, mixer_layer, patchify, scale_forecast, to_rows, BoundModel, ForwardPass,
};
pub use params::{
    init_params, DpwModel, MixerLayer, NamedParam, NamedParamMut, ParamGroup, ScaleBlock, ScaleBlockParams,
};

use crate::normalization::NormalizationError;
use crate::tensor::TensorError;
use crate::wavelet::WaveletError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Normalization(#[from] NormalizationError),
    #[error("input shape {got:?} does not match expected {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
}
