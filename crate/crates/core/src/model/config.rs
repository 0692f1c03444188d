use crate::wavelet::scale_lengths;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every invalid field found by [`ModelConfig::validate`].
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

/// Architecture hyperparameters plus the component-removal switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub n_scales: usize,
    pub patch_len: usize,
    pub hidden_dim: usize,
    pub mixer_layers: usize,
    /// Hidden width multiplier of both mixer MLPs.
    pub mlp_expansion: usize,
    /// Haar pyramid when true, window-2 average pooling otherwise.
    pub use_wavelet: bool,
    pub use_global_path: bool,
    pub use_local_path: bool,
    /// Softmax-weighted fusion when true, plain averaging otherwise.
    pub use_adaptive_fusion: bool,
    /// Initial `(w_g, w_l)`.
    pub gate_init: (f64, f64),
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            channels: 7,
            n_scales: 3,
            patch_len: 16,
            hidden_dim: 128,
            mixer_layers: 2,
            mlp_expansion: 2,
            use_wavelet: true,
            use_global_path: true,
            use_local_path: true,
            use_adaptive_fusion: true,
            gate_init: (0.5, 0.5),
            layer_norm_eps: 1e-5,
        }
    }
}

/// Patch layout of one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleGeometry {
    /// Series length at this scale.
    pub len: usize,
    /// Effective patch length, `min(P, len)`.
    pub patch_len: usize,
    pub n_patches: usize,
    /// `n_patches · patch_len`, the length after tail replication.
    pub padded_len: usize,
}

impl ScaleGeometry {
    pub fn new(len: usize, patch_len: usize) -> Self {
        let p = patch_len.min(len).max(1);
        let n_patches = len.div_ceil(p);
        Self { len, patch_len: p, n_patches, padded_len: n_patches * p }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("patch_len", self.patch_len),
            ("hidden_dim", self.hidden_dim),
            ("mlp_expansion", self.mlp_expansion),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be at least 1"));
            }
        }
        if !self.use_global_path && !self.use_local_path {
            errs.push("at least one of the global and local paths must be enabled".into());
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            errs.push("layer_norm_eps must be positive".into());
        }
        if !(self.gate_init.0.is_finite() && self.gate_init.1.is_finite()) {
            errs.push("gate_init must be finite".into());
        }
        if self.lookback > 0 && self.n_scales > 0 && self.lookback < (1usize << self.n_scales.min(63)) {
            log::warn!(
                "lookback {} is shorter than 2^{}; coarse scales will be degenerate",
                self.lookback,
                self.n_scales
            );
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }

    pub fn geometries(&self) -> Vec<ScaleGeometry> {
        scale_lengths(self.lookback, self.n_scales)
            .into_iter()
            .map(|len| ScaleGeometry::new(len, self.patch_len))
            .collect()
    }

    /// Short label of the active ablation, if any.
    pub fn ablation(&self) -> Option<&'static str> {
        if !self.use_wavelet {
            Some("no-wavelet")
        } else if !self.use_global_path {
            Some("no-global")
        } else if !self.use_local_path {
            Some("no-local")
        } else if !self.use_adaptive_fusion {
            Some("no-fusion")
        } else {
            None
        }
    }
}
