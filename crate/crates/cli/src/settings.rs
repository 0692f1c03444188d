//! Run configuration: defaults, then a flat `key = value` file, then flags.

use crate::error::CliError;
use clap::ValueEnum;
use dpwmixer::data::SplitRatios;
use dpwmixer::model::ModelConfig;
use dpwmixer::training::TrainConfig;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Component-removal switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Window-2 average pooling instead of the Haar pyramid.
    NoWavelet,
    NoGlobal,
    NoLocal,
    /// Uniform averaging of the scale forecasts.
    NoFusion,
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s.trim(), false)
    }
}

impl Ablation {
    pub fn apply(self, cfg: &mut ModelConfig) {
        match self {
            Ablation::NoWavelet => cfg.use_wavelet = false,
            Ablation::NoGlobal => cfg.use_global_path = false,
            Ablation::NoLocal => cfg.use_local_path = false,
            Ablation::NoFusion => cfg.use_adaptive_fusion = false,
        }
    }
}

/// Flags shared by `train` and `sweep`; every field may also come from `--config`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunArgs {
    /// Flat `key = value` file using the long flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV: optional leading date column, one numeric column per channel.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Pyramid depth N; the model forecasts from N + 1 scales.
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub patch_len: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub mixer_layers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seeds parameter initialization and the window shuffle.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chronological train,val,test ratios.
    #[arg(long)]
    pub split: Option<SplitRatios>,
    /// Step between consecutive window starts.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<Ablation>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_field<T: FromStr>(slot: &mut Option<T>, key: &str, value: &str, line: usize, errs: &mut Vec<String>)
where
    T::Err: std::fmt::Display,
{
    match value.parse::<T>() {
        Ok(v) => *slot = Some(v),
        Err(e) => errs.push(format!("line {line}: {key}: cannot parse {value:?}: {e}")),
    }
}

impl RunArgs {
    /// Parses a configuration file, reporting every bad line at once.
    pub fn parse_file(text: &str) -> Result<RunArgs, Vec<String>> {
        let mut out = RunArgs::default();
        let mut errs = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = match content.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => content.split_once(char::is_whitespace).map(|(k, v)| (k, v.trim())).unwrap_or((content, "")),
            };
            let key = key.replace('_', "-");
            if !seen.insert(key.clone()) {
                errs.push(format!("line {line}: duplicate key {key}"));
                continue;
            }
            match key.as_str() {
                "data" => out.data = Some(PathBuf::from(value)),
                "out" => out.out = Some(PathBuf::from(value)),
                "lookback" => parse_field(&mut out.lookback, &key, value, line, &mut errs),
                "horizon" => parse_field(&mut out.horizon, &key, value, line, &mut errs),
                "scales" => parse_field(&mut out.scales, &key, value, line, &mut errs),
                "patch-len" => parse_field(&mut out.patch_len, &key, value, line, &mut errs),
                "hidden-dim" => parse_field(&mut out.hidden_dim, &key, value, line, &mut errs),
                "mixer-layers" => parse_field(&mut out.mixer_layers, &key, value, line, &mut errs),
                "lr" => parse_field(&mut out.lr, &key, value, line, &mut errs),
                "batch-size" => parse_field(&mut out.batch_size, &key, value, line, &mut errs),
                "epochs" => parse_field(&mut out.epochs, &key, value, line, &mut errs),
                "patience" => parse_field(&mut out.patience, &key, value, line, &mut errs),
                "seed" => parse_field(&mut out.seed, &key, value, line, &mut errs),
                "split" => parse_field(&mut out.split, &key, value, line, &mut errs),
                "stride" => parse_field(&mut out.stride, &key, value, line, &mut errs),
                "ablate" => {
                    for part in value.split(',').filter(|p| !p.trim().is_empty()) {
                        match part.parse::<Ablation>() {
                            Ok(a) => out.ablate.push(a),
                            Err(e) => errs.push(format!("line {line}: ablate: {e}")),
                        }
                    }
                }
                _ => errs.push(format!("line {line}: unknown key {key}")),
            }
        }
        if errs.is_empty() {
            Ok(out)
        } else {
            Err(errs)
        }
    }

    pub fn load_file(path: &Path) -> Result<RunArgs, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_file(&text).map_err(|errs| CliError::Config(format!("{}: {}", path.display(), errs.join("; "))))
    }

    /// Fields set here win over those of `base`.
    pub fn over(self, base: RunArgs) -> RunArgs {
        RunArgs {
            config: self.config.or(base.config),
            data: self.data.or(base.data),
            lookback: self.lookback.or(base.lookback),
            horizon: self.horizon.or(base.horizon),
            scales: self.scales.or(base.scales),
            patch_len: self.patch_len.or(base.patch_len),
            hidden_dim: self.hidden_dim.or(base.hidden_dim),
            mixer_layers: self.mixer_layers.or(base.mixer_layers),
            lr: self.lr.or(base.lr),
            batch_size: self.batch_size.or(base.batch_size),
            epochs: self.epochs.or(base.epochs),
            patience: self.patience.or(base.patience),
            seed: self.seed.or(base.seed),
            split: self.split.or(base.split),
            stride: self.stride.or(base.stride),
            ablate: if self.ablate.is_empty() { base.ablate } else { self.ablate },
            out: self.out.or(base.out),
        }
    }

    /// Merges the `--config` file under the flags and validates the result.
    pub fn resolve(self) -> Result<RunSettings, CliError> {
        let merged = match &self.config {
            Some(path) => {
                let file = RunArgs::load_file(path)?;
                self.over(file)
            }
            None => self,
        };
        merged.into_settings()
    }

    fn into_settings(self) -> Result<RunSettings, CliError> {
        let mut errs = Vec::new();
        let defaults = ModelConfig::default();
        let mut model = ModelConfig {
            lookback: self.lookback.unwrap_or(defaults.lookback),
            horizon: self.horizon.unwrap_or(defaults.horizon),
            // Replaced by the dataset's channel count once it is loaded.
            channels: 1,
            n_scales: self.scales.unwrap_or(defaults.n_scales),
            patch_len: self.patch_len.unwrap_or(defaults.patch_len),
            hidden_dim: self.hidden_dim.unwrap_or(defaults.hidden_dim),
            mixer_layers: self.mixer_layers.unwrap_or(defaults.mixer_layers),
            ..defaults
        };
        for a in &self.ablate {
            a.apply(&mut model);
        }
        let t = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: self.lr.unwrap_or(t.learning_rate),
            batch_size: self.batch_size.unwrap_or(t.batch_size),
            max_epochs: self.epochs.unwrap_or(t.max_epochs),
            patience: self.patience.unwrap_or(t.patience),
            seed: self.seed.unwrap_or(t.seed),
            ..t
        };
        let split = self.split.unwrap_or_default();
        let stride = self.stride.unwrap_or(1);

        if self.data.is_none() {
            errs.push("data is required".to_string());
        }
        if self.out.is_none() {
            errs.push("out is required".to_string());
        }
        if let Err(e) = model.validate() {
            errs.extend(e.0);
        }
        if let Err(e) = train.validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = split.validate() {
            errs.push(e);
        }
        if stride == 0 {
            errs.push("stride must be at least 1".to_string());
        }
        if !errs.is_empty() {
            return Err(CliError::Config(errs.join("; ")));
        }
        Ok(RunSettings {
            data: self.data.unwrap(),
            out: self.out.unwrap(),
            model,
            train,
            split: split.to_string(),
            split_ratios: split,
            stride,
            ablate: self.ablate,
        })
    }
}

/// Fully resolved run configuration, as recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunSettings {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: String,
    #[serde(skip)]
    pub split_ratios: SplitRatios,
    pub stride: usize,
    pub ablate: Vec<Ablation>,
}
