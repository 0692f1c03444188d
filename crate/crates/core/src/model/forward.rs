use super::config::{ModelConfig, ScaleGeometry};
use super::params::{DpwModel, MixerLayer, ParamGroup, ScaleBlock};
use super::ModelError;
use crate::normalization::revin_normalize;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::wavelet::{avg_pool_pyramid, build_pyramid};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

/// Model parameters recorded as leaves on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub blocks: Vec<ScaleBlock<Var>>,
    pub fusion: Var,
    /// Same order as [`DpwModel::named_params`].
    pub vars: Vec<(String, ParamGroup, Var)>,
}

/// Handles to the interesting values of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[B·C, T]` forecast in input units, row `b·C + c`.
    pub prediction: Var,
    /// Fused forecast before inverse instance normalization.
    pub normalized: Var,
    /// `[B·C, T]` per scale.
    pub scale_forecasts: Vec<Var>,
    /// `[N+1, C]` softmax weights, absent under uniform fusion.
    pub fusion_weights: Option<Var>,
    pub params: BoundModel,
    pub batch: usize,
}

/// Affine map `x [n, in] · w [in, out] + b [out]`.
fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let m = tape.matmul(x, w)?;
    tape.add(m, b)
}

/// Channel-shared linear map of each row onto the horizon:
/// `x [R, L_j] · Wᵀ + b` with `W [T, L_j]`.
pub fn global_path(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
    let wt = tape.transpose(weight)?;
    let m = tape.matmul(x, wt)?;
    tape.add(m, bias)
}

/// Splits `[R, L_j]` rows into `[R, N_p, P_j]` non-overlapping patches,
/// replicating the last sample to fill the final patch.
pub fn patchify(tape: &mut Tape, x: Var, geometry: ScaleGeometry) -> Result<Var, TensorError> {
    let rows = tape.shape(x)[0];
    let padded = if geometry.padded_len > geometry.len { tape.pad_replicate_tail(x, geometry.padded_len)? } else { x };
    tape.reshape(padded, vec![rows, geometry.n_patches, geometry.patch_len])
}

/// Token-mixing then channel-mixing residual MLP blocks over `[R, N_p, D]`.
pub fn mixer_layer(tape: &mut Tape, z: Var, p: &MixerLayer<Var>, eps: f64) -> Result<Var, TensorError> {
    let (r, np, d) = match *tape.shape(z) {
        [r, np, d] => (r, np, d),
        ref other => return Err(TensorError::Shape { op: "mixer_layer", lhs: other.to_vec(), rhs: vec![0, 0, 0] }),
    };
    debug_assert!(r * np * d == tape.tensor(z).numel());
    let ln = tape.layer_norm(z, p.token_norm_gain, p.token_norm_bias, eps)?;
    let t = tape.transpose(ln)?;
    let h = linear(tape, t, p.token_fc1_weight, p.token_fc1_bias)?;
    let h = tape.gelu(h)?;
    let h = linear(tape, h, p.token_fc2_weight, p.token_fc2_bias)?;
    let h = tape.transpose(h)?;
    let u = tape.add(z, h)?;

    let ln = tape.layer_norm(u, p.channel_norm_gain, p.channel_norm_bias, eps)?;
    let h = linear(tape, ln, p.channel_fc1_weight, p.channel_fc1_bias)?;
    let h = tape.gelu(h)?;
    let h = linear(tape, h, p.channel_fc2_weight, p.channel_fc2_bias)?;
    tape.add(u, h)
}

/// Patch embedding, mixer stack and flatten-project head: `[R, L_j] → [R, T]`.
pub fn local_path(tape: &mut Tape, x: Var, block: &ScaleBlock<Var>, eps: f64) -> Result<Var, TensorError> {
    let g = block.geometry;
    let rows = tape.shape(x)[0];
    let patches = patchify(tape, x, g)?;
    let mut z = linear(tape, patches, block.embed_weight, block.embed_bias)?;
    let d = tape.shape(z)[2];
    for layer in &block.mixers {
        z = mixer_layer(tape, z, layer, eps)?;
    }
    let flat = tape.reshape(z, vec![rows, g.n_patches * d])?;
    linear(tape, flat, block.head_weight, block.head_bias)
}

/// Gated sum of the enabled paths for one scale.
pub fn scale_forecast(tape: &mut Tape, x: Var, block: &ScaleBlock<Var>, cfg: &ModelConfig) -> Result<Var, ModelError> {
    if tape.shape(x).get(1) != Some(&block.geometry.len) {
        return Err(ModelError::InputShape {
            expected: vec![tape.shape(x)[0], block.geometry.len],
            got: tape.shape(x).to_vec(),
        });
    }
    let global = if cfg.use_global_path {
        let h = global_path(tape, x, block.global_weight, block.global_bias)?;
        Some(tape.mul(h, block.gate_global)?)
    } else {
        None
    };
    let local = if cfg.use_local_path {
        let h = local_path(tape, x, block, cfg.layer_norm_eps)?;
        Some(tape.mul(h, block.gate_local)?)
    } else {
        None
    };
    match (global, local) {
        (Some(g), Some(l)) => Ok(tape.add(g, l)?),
        (Some(v), None) | (None, Some(v)) => Ok(v),
        (None, None) => {
            Err(super::ConfigError(vec!["at least one of the global and local paths must be enabled".into()]).into())
        }
    }
}

/// Per-channel weighted sum of `[B·C, T]` scale forecasts.
///
/// With `logits` the weights are `softmax(logits)` over the scale axis;
/// without, every scale gets `1/(N+1)`. Returns the fused forecast and the
/// weights when they were computed.
pub fn fuse(
    tape: &mut Tape,
    forecasts: &[Var],
    logits: Option<Var>,
    batch: usize,
    channels: usize,
) -> Result<(Var, Option<Var>), TensorError> {
    let first = *forecasts.first().ok_or(TensorError::Axis { op: "fuse", axis: 0, shape: vec![] })?;
    let shape = tape.shape(first).to_vec();
    let horizon = shape[1];
    for &f in forecasts {
        if tape.shape(f) != shape.as_slice() {
            return Err(TensorError::Shape { op: "fuse", lhs: shape, rhs: tape.shape(f).to_vec() });
        }
    }
    let n = forecasts.len();
    let weights = match logits {
        Some(a) => {
            if tape.shape(a) != [n, channels] {
                return Err(TensorError::Shape { op: "fuse", lhs: vec![n, channels], rhs: tape.shape(a).to_vec() });
            }
            Some(tape.softmax(a, 0)?)
        }
        None => None,
    };
    let mut acc: Option<Var> = None;
    for (j, &f) in forecasts.iter().enumerate() {
        let term = match weights {
            Some(w) => {
                let row = tape.slice(w, 0, j, j + 1)?;
                let col = tape.reshape(row, vec![channels, 1])?;
                let f3 = tape.reshape(f, vec![batch, channels, horizon])?;
                let t = tape.mul(f3, col)?;
                tape.reshape(t, vec![batch * channels, horizon])?
            }
            None => tape.mul_scalar(f, 1.0 / n as f64)?,
        };
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok((acc.expect("at least one forecast"), weights))
}

/// `[B, T, C]` → rows `b·C + c` of length `T`.
pub fn to_rows(x: ArrayView3<f64>) -> Vec<f64> {
    let (b, t, c) = x.dim();
    let mut out = vec![0.0; b * t * c];
    for bi in 0..b {
        for ti in 0..t {
            for ci in 0..c {
                out[(bi * c + ci) * t + ti] = x[[bi, ti, ci]];
            }
        }
    }
    out
}

/// Inverse of [`to_rows`].
pub fn from_rows(rows: &[f64], batch: usize, len: usize, channels: usize) -> Array3<f64> {
    Array3::from_shape_fn((batch, len, channels), |(b, t, c)| rows[(b * channels + c) * len + t])
}

impl DpwModel {
    /// Records every parameter as a tape leaf. Leaves of trainable groups
    /// require gradients when `with_grad` is set.
    pub fn bind(&self, tape: &mut Tape, with_grad: bool) -> BoundModel {
        let cfg = &self.config;
        let mut leaf = |group: ParamGroup, t: &Tensor| -> Result<Var, std::convert::Infallible> {
            let mut t = t.clone();
            t.set_requires_grad(with_grad && group.trainable(cfg));
            Ok(tape.leaf(t))
        };
        let blocks: Vec<ScaleBlock<Var>> =
            self.blocks.iter().map(|b| b.try_map(&mut leaf).unwrap_or_else(|e| match e {})).collect();
        let fusion = leaf(ParamGroup::Fusion, &self.fusion).unwrap_or_else(|e| match e {});
        let mut vars = Vec::new();
        for (j, b) in blocks.iter().enumerate() {
            for (name, group, v) in b.entries() {
                vars.push((format!("blocks.{j}.{name}"), group, *v));
            }
        }
        vars.push(("fusion".into(), ParamGroup::Fusion, fusion));
        BoundModel { blocks, fusion, vars }
    }

    /// Full pipeline on a `[B, L, C]` batch: instance normalization, scale
    /// pyramid, per-scale forecasts, fusion and inverse normalization.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        inputs: ArrayView3<f64>,
        with_grad: bool,
    ) -> Result<ForwardPass, ModelError> {
        let cfg = &self.config;
        let (batch, len, channels) = inputs.dim();
        if len != cfg.lookback || channels != cfg.channels {
            return Err(ModelError::InputShape {
                expected: vec![batch, cfg.lookback, cfg.channels],
                got: vec![batch, len, channels],
            });
        }
        let rows = batch * channels;
        let geoms = cfg.geometries();
        let mut scale_rows: Vec<Vec<f64>> = geoms.iter().map(|g| vec![0.0; rows * g.len]).collect();
        let mut mu = vec![0.0; rows];
        let mut sigma = vec![0.0; rows];
        for (b, window) in inputs.axis_iter(Axis(0)).enumerate() {
            let (normed, stats) = revin_normalize(window)?;
            let scales = if cfg.use_wavelet {
                build_pyramid(normed.view(), cfg.n_scales)?.scales_input
            } else {
                avg_pool_pyramid(normed.view(), cfg.n_scales)?
            };
            for (j, s) in scales.iter().enumerate() {
                let lj = geoms[j].len;
                for c in 0..channels {
                    let dst = &mut scale_rows[j][(b * channels + c) * lj..(b * channels + c + 1) * lj];
                    for (t, v) in s.column(c).iter().enumerate() {
                        dst[t] = *v;
                    }
                }
            }
            for c in 0..channels {
                mu[b * channels + c] = stats.mu[c];
                sigma[b * channels + c] = stats.sigma[c];
            }
        }

        let params = self.bind(tape, with_grad);
        let mut scale_forecasts = Vec::with_capacity(geoms.len());
        for (j, data) in scale_rows.into_iter().enumerate() {
            let x = tape.constant(vec![rows, geoms[j].len], data)?;
            scale_forecasts.push(scale_forecast(tape, x, &params.blocks[j], cfg)?);
        }
        let logits = cfg.use_adaptive_fusion.then_some(params.fusion);
        let (normalized, fusion_weights) = fuse(tape, &scale_forecasts, logits, batch, channels)?;
        let sigma = tape.constant(vec![rows, 1], sigma)?;
        let mu = tape.constant(vec![rows, 1], mu)?;
        let scaled = tape.mul(normalized, sigma)?;
        let prediction = tape.add(scaled, mu)?;
        Ok(ForwardPass { prediction, normalized, scale_forecasts, fusion_weights, params, batch })
    }

    /// Forecasts `[B, T, C]` for a `[B, L, C]` batch.
    pub fn predict(&self, inputs: ArrayView3<f64>) -> Result<Array3<f64>, ModelError> {
        let mut tape = Tape::new();
        let pass = self.forward_tape(&mut tape, inputs, false)?;
        let (b, _, c) = inputs.dim();
        Ok(from_rows(tape.value(pass.prediction), b, self.config.horizon, c))
    }

    /// Forecasts one `L × C` window, returning `T × C`.
    pub fn forward(&self, x_raw: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        let batch = x_raw.insert_axis(Axis(0));
        let out = self.predict(batch)?;
        Ok(out.index_axis_move(Axis(0), 0))
    }

    /// Current `[N+1, C]` fusion weights.
    pub fn fusion_weights(&self) -> Result<Array2<f64>, ModelError> {
        let (n, c) = (self.config.n_scales + 1, self.config.channels);
        if !self.config.use_adaptive_fusion {
            return Ok(Array2::from_elem((n, c), 1.0 / n as f64));
        }
        let mut tape = Tape::new();
        let a = tape.leaf(self.fusion.clone());
        let w = tape.softmax(a, 0)?;
        Ok(Array2::from_shape_vec((n, c), tape.value(w).to_vec()).expect("shape"))
    }
}
