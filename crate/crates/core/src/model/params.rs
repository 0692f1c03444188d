use super::config::{ModelConfig, ScaleGeometry};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which part of the network a parameter belongs to; decides whether it is
/// trained under the ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Global,
    GateGlobal,
    Local,
    GateLocal,
    Fusion,
}

impl ParamGroup {
    pub fn trainable(self, cfg: &ModelConfig) -> bool {
        match self {
            ParamGroup::Global | ParamGroup::GateGlobal => cfg.use_global_path,
            ParamGroup::Local | ParamGroup::GateLocal => cfg.use_local_path,
            ParamGroup::Fusion => cfg.use_adaptive_fusion,
        }
    }
}

/// One token-mixing plus channel-mixing residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerLayer<T> {
    pub token_norm_gain: T,
    pub token_norm_bias: T,
    pub token_fc1_weight: T,
    pub token_fc1_bias: T,
    pub token_fc2_weight: T,
    pub token_fc2_bias: T,
    pub channel_norm_gain: T,
    pub channel_norm_bias: T,
    pub channel_fc1_weight: T,
    pub channel_fc1_bias: T,
    pub channel_fc2_weight: T,
    pub channel_fc2_bias: T,
}

impl<T> MixerLayer<T> {
    pub fn fields(&self) -> [(&'static str, &T); 12] {
        [
            ("token_norm.gain", &self.token_norm_gain),
            ("token_norm.bias", &self.token_norm_bias),
            ("token_fc1.weight", &self.token_fc1_weight),
            ("token_fc1.bias", &self.token_fc1_bias),
            ("token_fc2.weight", &self.token_fc2_weight),
            ("token_fc2.bias", &self.token_fc2_bias),
            ("channel_norm.gain", &self.channel_norm_gain),
            ("channel_norm.bias", &self.channel_norm_bias),
            ("channel_fc1.weight", &self.channel_fc1_weight),
            ("channel_fc1.bias", &self.channel_fc1_bias),
            ("channel_fc2.weight", &self.channel_fc2_weight),
            ("channel_fc2.bias", &self.channel_fc2_bias),
        ]
    }

    pub fn fields_mut(&mut self) -> [(&'static str, &mut T); 12] {
        [
            ("token_norm.gain", &mut self.token_norm_gain),
            ("token_norm.bias", &mut self.token_norm_bias),
            ("token_fc1.weight", &mut self.token_fc1_weight),
            ("token_fc1.bias", &mut self.token_fc1_bias),
            ("token_fc2.weight", &mut self.token_fc2_weight),
            ("token_fc2.bias", &mut self.token_fc2_bias),
            ("channel_norm.gain", &mut self.channel_norm_gain),
            ("channel_norm.bias", &mut self.channel_norm_bias),
            ("channel_fc1.weight", &mut self.channel_fc1_weight),
            ("channel_fc1.bias", &mut self.channel_fc1_bias),
            ("channel_fc2.weight", &mut self.channel_fc2_weight),
            ("channel_fc2.bias", &mut self.channel_fc2_bias),
        ]
    }

    fn try_map<U, E>(&self, f: &mut impl FnMut(&'static str, &T) -> Result<U, E>) -> Result<MixerLayer<U>, E> {
        Ok(MixerLayer {
            token_norm_gain: f("token_norm.gain", &self.token_norm_gain)?,
            token_norm_bias: f("token_norm.bias", &self.token_norm_bias)?,
            token_fc1_weight: f("token_fc1.weight", &self.token_fc1_weight)?,
            token_fc1_bias: f("token_fc1.bias", &self.token_fc1_bias)?,
            token_fc2_weight: f("token_fc2.weight", &self.token_fc2_weight)?,
            token_fc2_bias: f("token_fc2.bias", &self.token_fc2_bias)?,
            channel_norm_gain: f("channel_norm.gain", &self.channel_norm_gain)?,
            channel_norm_bias: f("channel_norm.bias", &self.channel_norm_bias)?,
            channel_fc1_weight: f("channel_fc1.weight", &self.channel_fc1_weight)?,
            channel_fc1_bias: f("channel_fc1.bias", &self.channel_fc1_bias)?,
            channel_fc2_weight: f("channel_fc2.weight", &self.channel_fc2_weight)?,
            channel_fc2_bias: f("channel_fc2.bias", &self.channel_fc2_bias)?,
        })
    }
}

/// Learnable state of one scale's dual-path forecaster.
///
/// Generic over the leaf type: `ScaleBlock<Tensor>` holds values,
/// `ScaleBlock<Var>` the same parameters bound onto a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBlock<T> {
    pub geometry: ScaleGeometry,
    /// `[T, L_j]`, shared by all channels.
    pub global_weight: T,
    pub global_bias: T,
    /// `[P_j, D]`.
    pub embed_weight: T,
    pub embed_bias: T,
    pub mixers: Vec<MixerLayer<T>>,
    /// `[N_p·D, T]`.
    pub head_weight: T,
    pub head_bias: T,
    pub gate_global: T,
    pub gate_local: T,
}

pub type ScaleBlockParams = ScaleBlock<Tensor>;

impl<T> ScaleBlock<T> {
    /// `(name, group, value)` for every parameter in a fixed order.
    pub fn entries(&self) -> Vec<(String, ParamGroup, &T)> {
        let mut out = vec![
            ("global.weight".to_string(), ParamGroup::Global, &self.global_weight),
            ("global.bias".to_string(), ParamGroup::Global, &self.global_bias),
            ("embed.weight".to_string(), ParamGroup::Local, &self.embed_weight),
            ("embed.bias".to_string(), ParamGroup::Local, &self.embed_bias),
        ];
        for (l, m) in self.mixers.iter().enumerate() {
            for (name, v) in m.fields() {
                out.push((format!("mixer.{l}.{name}"), ParamGroup::Local, v));
            }
        }
        out.push(("head.weight".into(), ParamGroup::Local, &self.head_weight));
        out.push(("head.bias".into(), ParamGroup::Local, &self.head_bias));
        out.push(("gate_global".into(), ParamGroup::GateGlobal, &self.gate_global));
        out.push(("gate_local".into(), ParamGroup::GateLocal, &self.gate_local));
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, ParamGroup, &mut T)> {
        let mut out = vec![
            ("global.weight".to_string(), ParamGroup::Global, &mut self.global_weight),
            ("global.bias".to_string(), ParamGroup::Global, &mut self.global_bias),
            ("embed.weight".to_string(), ParamGroup::Local, &mut self.embed_weight),
            ("embed.bias".to_string(), ParamGroup::Local, &mut self.embed_bias),
        ];
        for (l, m) in self.mixers.iter_mut().enumerate() {
            for (name, v) in m.fields_mut() {
                out.push((format!("mixer.{l}.{name}"), ParamGroup::Local, v));
            }
        }
        out.push(("head.weight".into(), ParamGroup::Local, &mut self.head_weight));
        out.push(("head.bias".into(), ParamGroup::Local, &mut self.head_bias));
        out.push(("gate_global".into(), ParamGroup::GateGlobal, &mut self.gate_global));
        out.push(("gate_local".into(), ParamGroup::GateLocal, &mut self.gate_local));
        out
    }

    /// Rebuilds the block with every leaf passed through `f(group, leaf)`.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(ParamGroup, &T) -> Result<U, E>) -> Result<ScaleBlock<U>, E> {
        use ParamGroup::*;
        Ok(ScaleBlock {
            geometry: self.geometry,
            global_weight: f(Global, &self.global_weight)?,
            global_bias: f(Global, &self.global_bias)?,
            embed_weight: f(Local, &self.embed_weight)?,
            embed_bias: f(Local, &self.embed_bias)?,
            mixers: self.mixers.iter().map(|m| m.try_map(&mut |_, v| f(Local, v))).collect::<Result<_, _>>()?,
            head_weight: f(Local, &self.head_weight)?,
            head_bias: f(Local, &self.head_bias)?,
            gate_global: f(GateGlobal, &self.gate_global)?,
            gate_local: f(GateLocal, &self.gate_local)?,
        })
    }
}

/// Full parameter set: one block per scale plus the fusion logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DpwModel {
    pub config: ModelConfig,
    pub blocks: Vec<ScaleBlockParams>,
    /// `[N+1, C]` logits; softmax over the scale axis gives fusion weights.
    pub fusion: Tensor,
}

/// A parameter's checkpoint name, group and value.
pub struct NamedParam<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: &'a Tensor,
}

pub struct NamedParamMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: &'a mut Tensor,
}

impl DpwModel {
    pub fn named_params(&self) -> Vec<NamedParam<'_>> {
        let mut out = Vec::new();
        for (j, b) in self.blocks.iter().enumerate() {
            for (name, group, tensor) in b.entries() {
                out.push(NamedParam { name: format!("blocks.{j}.{name}"), group, tensor });
            }
        }
        out.push(NamedParam { name: "fusion".into(), group: ParamGroup::Fusion, tensor: &self.fusion });
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<NamedParamMut<'_>> {
        let mut out = Vec::new();
        for (j, b) in self.blocks.iter_mut().enumerate() {
            for (name, group, tensor) in b.entries_mut() {
                out.push(NamedParamMut { name: format!("blocks.{j}.{name}"), group, tensor });
            }
        }
        out.push(NamedParamMut { name: "fusion".into(), group: ParamGroup::Fusion, tensor: &mut self.fusion });
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.named_params().iter().filter(|p| p.group.trainable(&self.config)).map(|p| p.tensor.numel()).sum()
    }

    /// Copies every parameter value from `other`, which must share the layout.
    pub fn copy_params_from(&mut self, other: &DpwModel) {
        for (dst, src) in self.named_params_mut().into_iter().zip(other.named_params()) {
            debug_assert_eq!(dst.name, src.name);
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
    }
}

struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// `uniform(−1/√fan_in, 1/√fan_in)` over `[fan_in, fan_out]`-shaped data.
    fn weight(&mut self, shape: [usize; 2], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape[0] * shape[1];
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }
}

fn init_block(cfg: &ModelConfig, geometry: ScaleGeometry, init: &mut Init) -> ScaleBlockParams {
    let (t, d, e) = (cfg.horizon, cfg.hidden_dim, cfg.mlp_expansion);
    let np = geometry.n_patches;
    let global_weight = init.weight([t, geometry.len], geometry.len);
    let embed_weight = init.weight([geometry.patch_len, d], geometry.patch_len);
    let mixers = (0..cfg.mixer_layers)
        .map(|_| MixerLayer {
            token_norm_gain: Tensor::full(vec![d], 1.0),
            token_norm_bias: Tensor::zeros(vec![d]),
            token_fc1_weight: init.weight([np, e * np], np),
            token_fc1_bias: Tensor::zeros(vec![e * np]),
            token_fc2_weight: init.weight([e * np, np], e * np),
            token_fc2_bias: Tensor::zeros(vec![np]),
            channel_norm_gain: Tensor::full(vec![d], 1.0),
            channel_norm_bias: Tensor::zeros(vec![d]),
            channel_fc1_weight: init.weight([d, e * d], d),
            channel_fc1_bias: Tensor::zeros(vec![e * d]),
            channel_fc2_weight: init.weight([e * d, d], e * d),
            channel_fc2_bias: Tensor::zeros(vec![d]),
        })
        .collect();
    let head_weight = init.weight([np * d, t], np * d);
    ScaleBlock {
        geometry,
        global_weight,
        global_bias: Tensor::zeros(vec![t]),
        embed_weight,
        embed_bias: Tensor::zeros(vec![d]),
        mixers,
        head_weight,
        head_bias: Tensor::zeros(vec![t]),
        gate_global: Tensor::scalar(cfg.gate_init.0),
        gate_local: Tensor::scalar(cfg.gate_init.1),
    }
}

/// Seeded initialization: weights `uniform(±1/√fan_in)`, biases zero,
/// norm gains one, gates from the config, fusion logits zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<DpwModel, super::config::ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init { rng: &mut rng };
    let blocks = config.geometries().into_iter().map(|g| init_block(config, g, &mut init)).collect();
    Ok(DpwModel { config: config.clone(), blocks, fusion: Tensor::zeros(vec![config.n_scales + 1, config.channels]) })
}
