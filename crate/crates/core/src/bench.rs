//! Wall-clock scaling of one training epoch with look-back length and
//! number of scales.

use crate::data::{make_splits, synth_sine_trend, Split, SplitRatios};
use crate::model::{init_params, ModelConfig};
use crate::training::{train_step, trainable_sizes, AdamState, TrainError};
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    /// Ascending look-back lengths.
    pub lengths: Vec<usize>,
    pub horizon: usize,
    pub channels: usize,
    /// Scales of the multi-scale model; the baseline uses none.
    pub n_scales: usize,
    pub patch_len: usize,
    pub hidden_dim: usize,
    pub mixer_layers: usize,
    pub batch_size: usize,
    /// Optimizer steps that make up one timed epoch.
    pub batches: usize,
    /// Each epoch is timed this many times and the fastest run is kept.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![256, 512, 1024],
            horizon: 96,
            channels: 1,
            n_scales: 3,
            patch_len: 16,
            hidden_dim: 128,
            mixer_layers: 2,
            batch_size: 32,
            batches: 4,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub lookback: usize,
    /// Seconds per epoch with `n_scales` scales.
    pub multi_scale_seconds: f64,
    /// Seconds per epoch with the input scale only.
    pub single_scale_seconds: f64,
    pub scale_ratio: f64,
    /// `multi_scale_seconds` over that of the previous row; absent on the first row.
    pub length_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn max_scale_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.scale_ratio).fold(0.0, f64::max)
    }

    pub fn max_length_ratio(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.length_ratio).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lookback,multi_scale_seconds,single_scale_seconds,scale_ratio,length_ratio\n");
        for r in &self.rows {
            let lr = r.length_ratio.map(|v| format!("{v:.4}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.4},{}\n",
                r.lookback, r.multi_scale_seconds, r.single_scale_seconds, r.scale_ratio, lr
            ));
        }
        out
    }
}

/// Fastest of `repeats` timings of `batches` optimizer steps.
pub fn time_epoch(model_cfg: &ModelConfig, cfg: &BenchConfig) -> Result<f64, TrainError> {
    let windows = cfg.batch_size * cfg.batches;
    let len = ((model_cfg.lookback + model_cfg.horizon + windows) as f64 / 0.7).ceil() as usize
        + 2 * model_cfg.lookback
        + 2 * model_cfg.horizon;
    let series = synth_sine_trend(len, model_cfg.channels, &[24.0, 7.0], 0.001, 0.1, cfg.seed);
    let data = make_splits(&series, SplitRatios::default(), model_cfg.lookback, model_cfg.horizon, 1)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let starts: Vec<usize> = data.windows(Split::Train).iter().copied().take(windows).collect();
    let mut best = f64::INFINITY;
    for _ in 0..cfg.repeats.max(1) {
        let mut model = init_params(model_cfg, cfg.seed).map_err(|e| TrainError::Config(e.to_string()))?;
        let mut adam = AdamState::new(&trainable_sizes(&model), 0.9, 0.999, 1e-8);
        let clock = Instant::now();
        for chunk in starts.chunks(cfg.batch_size) {
            train_step(&mut model, &data, chunk, &mut adam, 1e-4)?;
        }
        best = best.min(clock.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Times the multi-scale and single-scale models at every look-back length.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, TrainError> {
    if cfg.lengths.is_empty() || cfg.lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrainError::Config("bench lengths must be nonempty and strictly ascending".into()));
    }
    if cfg.batch_size == 0 || cfg.batches == 0 {
        return Err(TrainError::Config("bench batch_size and batches must be positive".into()));
    }
    let mut rows: Vec<BenchRow> = Vec::new();
    for &lookback in &cfg.lengths {
        let base = ModelConfig {
            lookback,
            horizon: cfg.horizon,
            channels: cfg.channels,
            n_scales: cfg.n_scales,
            patch_len: cfg.patch_len,
            hidden_dim: cfg.hidden_dim,
            mixer_layers: cfg.mixer_layers,
            ..ModelConfig::default()
        };
        let multi = time_epoch(&base, cfg)?;
        let single = time_epoch(&ModelConfig { n_scales: 0, ..base }, cfg)?;
        let length_ratio = rows.last().map(|prev| multi / prev.multi_scale_seconds);
        log::info!("L={lookback}: {multi:.4}s with {} scales, {single:.4}s single", cfg.n_scales);
        rows.push(BenchRow {
            lookback,
            multi_scale_seconds: multi,
            single_scale_seconds: single,
            scale_ratio: multi / single,
            length_ratio,
        });
    }
    Ok(BenchReport { rows })
}
