//! Versioned plain-text checkpoints.
//!
//! ```text
//! dpwmixer-checkpoint v1
//! config lookback 96
//! ...
//! scaler mean 1.5 -0.25
//! scaler std 2 1
//! param blocks.0.global.weight 2 24 96
//! <row-major values>
//! end
//! ```
//!
//! Values are written in the shortest exponent form that parses back to
//! the same `f64`, so a save/load round trip is bit-exact.

use crate::model::{init_params, DpwModel, ModelConfig};
use crate::normalization::DatasetScaler;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MAGIC: &str = "dpwmixer-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported checkpoint version {0} (this build reads up to v{VERSION})")]
    Version(String),
    #[error("checkpoint does not match its configuration: {0}")]
    Mismatch(String),
}

/// A trained model together with the scaler its inputs were standardized by.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DpwModel,
    pub scaler: DatasetScaler,
}

fn config_lines(cfg: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("lookback", cfg.lookback.to_string()),
        ("horizon", cfg.horizon.to_string()),
        ("channels", cfg.channels.to_string()),
        ("n_scales", cfg.n_scales.to_string()),
        ("patch_len", cfg.patch_len.to_string()),
        ("hidden_dim", cfg.hidden_dim.to_string()),
        ("mixer_layers", cfg.mixer_layers.to_string()),
        ("mlp_expansion", cfg.mlp_expansion.to_string()),
        ("use_wavelet", cfg.use_wavelet.to_string()),
        ("use_global_path", cfg.use_global_path.to_string()),
        ("use_local_path", cfg.use_local_path.to_string()),
        ("use_adaptive_fusion", cfg.use_adaptive_fusion.to_string()),
        ("gate_init", format!("{} {}", cfg.gate_init.0, cfg.gate_init.1)),
        ("layer_norm_eps", cfg.layer_norm_eps.to_string()),
    ]
}

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:e}").expect("write to string");
    }
    s
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} v{VERSION}\n");
        for (k, v) in config_lines(&self.model.config) {
            writeln!(out, "config {k} {v}").unwrap();
        }
        writeln!(out, "scaler mean {}", join(&self.scaler.mean)).unwrap();
        writeln!(out, "scaler std {}", join(&self.scaler.std)).unwrap();
        for p in self.model.named_params() {
            let dims: Vec<String> = p.tensor.shape().iter().map(|d| d.to_string()).collect();
            writeln!(out, "param {} {} {}", p.name, dims.len(), dims.join(" ")).unwrap();
            writeln!(out, "{}", join(p.tensor.data())).unwrap();
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let fmt = |line: usize, message: String| CheckpointError::Format { line, message };

        let (_, header) = lines.next().ok_or_else(|| fmt(1, "empty file".into()))?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| fmt(1, format!("expected header `{MAGIC} v{VERSION}`")))?;
        match version.strip_prefix('v').and_then(|v| v.parse::<u32>().ok()) {
            Some(v) if (1..=VERSION).contains(&v) => {}
            _ => return Err(CheckpointError::Version(version.to_string())),
        }

        let mut cfg = ModelConfig::default();
        let mut seen_config = Vec::new();
        let mut mean = None;
        let mut std = None;
        let mut params: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        let mut ended = false;

        let parse_f64s = |line: usize, words: &[&str]| -> Result<Vec<f64>, CheckpointError> {
            words.iter().map(|w| w.parse::<f64>().map_err(|_| fmt(line, format!("`{w}` is not a number")))).collect()
        };

        while let Some((n, line)) = lines.next() {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                [] => continue,
                ["end"] => {
                    ended = true;
                    break;
                }
                ["config", key, rest @ ..] => {
                    let value = rest.join(" ");
                    set_config(&mut cfg, key, &value).map_err(|m| fmt(n, m))?;
                    seen_config.push(key.to_string());
                }
                ["scaler", "mean", rest @ ..] => mean = Some(parse_f64s(n, rest)?),
                ["scaler", "std", rest @ ..] => std = Some(parse_f64s(n, rest)?),
                ["param", name, ndim, dims @ ..] => {
                    let ndim: usize = ndim.parse().map_err(|_| fmt(n, format!("bad rank `{ndim}`")))?;
                    if dims.len() != ndim {
                        return Err(fmt(n, format!("rank {ndim} but {} dims", dims.len())));
                    }
                    let dims: Vec<usize> = dims
                        .iter()
                        .map(|d| d.parse().map_err(|_| fmt(n, format!("bad dim `{d}`"))))
                        .collect::<Result<_, _>>()?;
                    let (vn, vline) = lines.next().ok_or_else(|| fmt(n + 1, format!("missing values for {name}")))?;
                    let words: Vec<&str> = vline.split_whitespace().collect();
                    let values = parse_f64s(vn, &words)?;
                    if values.len() != dims.iter().product::<usize>() {
                        return Err(fmt(vn, format!("{name}: {} values for shape {dims:?}", values.len())));
                    }
                    if params.insert(name.to_string(), (dims, values)).is_some() {
                        return Err(fmt(n, format!("duplicate parameter {name}")));
                    }
                }
                _ => return Err(fmt(n, format!("unrecognized line `{line}`"))),
            }
        }
        if !ended {
            return Err(fmt(text.lines().count(), "truncated file, no `end` marker".into()));
        }
        for (key, _) in config_lines(&cfg) {
            if !seen_config.iter().any(|k| k == key) {
                return Err(CheckpointError::Mismatch(format!("config key {key} missing")));
            }
        }
        let mean = mean.ok_or_else(|| CheckpointError::Mismatch("scaler mean missing".into()))?;
        let std = std.ok_or_else(|| CheckpointError::Mismatch("scaler std missing".into()))?;
        if mean.len() != cfg.channels || std.len() != cfg.channels {
            return Err(CheckpointError::Mismatch(format!(
                "scaler has {}/{} entries for {} channels",
                mean.len(),
                std.len(),
                cfg.channels
            )));
        }

        let mut model = init_params(&cfg, 0).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        for p in model.named_params_mut() {
            let (dims, values) = params
                .remove(&p.name)
                .ok_or_else(|| CheckpointError::Mismatch(format!("parameter {} missing", p.name)))?;
            if dims != p.tensor.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter {} has shape {dims:?}, expected {:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(&values);
        }
        if let Some(extra) = params.keys().next() {
            return Err(CheckpointError::Mismatch(format!("unexpected parameter {extra}")));
        }
        Ok(Self { model, scaler: DatasetScaler { mean, std } })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_text()).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        Self::from_text(&text)
    }
}

fn set_config(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
        v.parse().map_err(|_| format!("config {key}: cannot parse `{v}`"))
    }
    match key {
        "lookback" => cfg.lookback = num(key, value)?,
        "horizon" => cfg.horizon = num(key, value)?,
        "channels" => cfg.channels = num(key, value)?,
        "n_scales" => cfg.n_scales = num(key, value)?,
        "patch_len" => cfg.patch_len = num(key, value)?,
        "hidden_dim" => cfg.hidden_dim = num(key, value)?,
        "mixer_layers" => cfg.mixer_layers = num(key, value)?,
        "mlp_expansion" => cfg.mlp_expansion = num(key, value)?,
        "use_wavelet" => cfg.use_wavelet = num(key, value)?,
        "use_global_path" => cfg.use_global_path = num(key, value)?,
        "use_local_path" => cfg.use_local_path = num(key, value)?,
        "use_adaptive_fusion" => cfg.use_adaptive_fusion = num(key, value)?,
        "layer_norm_eps" => cfg.layer_norm_eps = num(key, value)?,
        "gate_init" => {
            let parts: Vec<&str> = value.split_whitespace().collect();
            let [g, l] = parts.as_slice() else {
                return Err(format!("config gate_init: expected two numbers, got `{value}`"));
            };
            cfg.gate_init = (num(key, g)?, num(key, l)?);
        }
        other => return Err(format!("unknown config key `{other}`")),
    }
    Ok(())
}
