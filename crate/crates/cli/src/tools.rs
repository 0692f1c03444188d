//! `bench`, `inspect-pyramid`, `grad-check` and `synth`.

use crate::error::CliError;
use crate::settings::Ablation;
use dpwmixer::bench::{run_bench, BenchConfig};
use dpwmixer::data::{load_csv, synth_sine_trend, with_high_frequency, write_csv, CsvOptions, RawSeries};
use dpwmixer::model::{init_params, ModelConfig};
use dpwmixer::training::grad_check;
use dpwmixer::wavelet::{avg_pool_pyramid, build_pyramid, energy};
use ndarray::{s, Array3};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, clap::Args)]
pub struct BenchArgs {
    /// Ascending look-back lengths.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 96)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 3)]
    pub scales: usize,
    #[arg(long, default_value_t = 16)]
    pub patch_len: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub mixer_layers: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Optimizer steps per timed epoch.
    #[arg(long, default_value_t = 4)]
    pub batches: usize,
    /// Timings per configuration; the fastest is kept.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV file for the scaling table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let cfg = BenchConfig {
        lengths: args.lengths,
        horizon: args.horizon,
        channels: args.channels,
        n_scales: args.scales,
        patch_len: args.patch_len,
        hidden_dim: args.hidden_dim,
        mixer_layers: args.mixer_layers,
        batch_size: args.batch_size,
        batches: args.batches,
        repeats: args.repeats,
        seed: args.seed,
    };
    let report = run_bench(&cfg)?;
    let csv = report.to_csv();
    print!("{csv}");
    println!(
        "max multi/single-scale ratio {:.3}, max time(2L)/time(L) {:.3}",
        report.max_scale_ratio(),
        report.max_length_ratio()
    );
    if let Some(path) = &args.out {
        std::fs::write(path, csv).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, clap::Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub scales: usize,
    /// Directory for per-level approximation and detail CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-level energy ledger of the Haar pyramid next to the pooled series' energy.
pub fn pyramid_ledger(series: &RawSeries, scales: usize) -> Result<String, CliError> {
    let pyramid = build_pyramid(series.values.view(), scales)?;
    let pooled = avg_pool_pyramid(series.values.view(), scales)?;
    let mut out = String::from("level,length,parent_energy,approx_energy,detail_energy,relative_gap,pooled_energy\n");
    for (e, lvl) in pyramid.energy_ledger().iter().zip(&pyramid.levels) {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{}",
            e.level,
            lvl.approx.nrows(),
            e.parent,
            e.approx,
            e.detail,
            e.relative_gap(),
            energy(pooled[e.level].view())
        )
        .expect("write to string");
    }
    Ok(out)
}

pub fn cmd_inspect_pyramid(args: InspectArgs) -> Result<(), CliError> {
    let series = load_csv(&args.data, &CsvOptions::default())?;
    let ledger = pyramid_ledger(&series, args.scales)?;
    print!("{ledger}");
    let Some(out) = &args.out else { return Ok(()) };
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let ledger_path = out.join("ledger.csv");
    std::fs::write(&ledger_path, &ledger).map_err(|e| CliError::io(&ledger_path, e))?;
    let pyramid = build_pyramid(series.values.view(), args.scales)?;
    for (j, lvl) in pyramid.levels.iter().enumerate() {
        for (kind, values) in [("approx", &lvl.approx), ("detail", &lvl.detail)] {
            let level =
                RawSeries { timestamps: None, values: values.clone(), channel_names: series.channel_names.clone() };
            write_csv(&level, out.join(format!("level{}_{kind}.csv", j + 1)))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, clap::Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 16)]
    pub lookback: usize,
    #[arg(long, default_value_t = 4)]
    pub horizon: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 1)]
    pub scales: usize,
    #[arg(long, default_value_t = 4)]
    pub patch_len: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub mixer_layers: usize,
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<Ablation>,
    /// Windows in the checked batch.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

pub fn cmd_grad_check(args: GradCheckArgs) -> Result<(), CliError> {
    let mut cfg = ModelConfig {
        lookback: args.lookback,
        horizon: args.horizon,
        channels: args.channels,
        n_scales: args.scales,
        patch_len: args.patch_len,
        hidden_dim: args.hidden_dim,
        mixer_layers: args.mixer_layers,
        ..ModelConfig::default()
    };
    for a in &args.ablate {
        a.apply(&mut cfg);
    }
    if args.batch == 0 || args.step.is_nan() || args.step <= 0.0 {
        return Err(CliError::Config("batch and step must be positive".into()));
    }
    let model = init_params(&cfg, args.seed)?;
    let (l, t, c) = (cfg.lookback, cfg.horizon, cfg.channels);
    let period = (l as f64 / 2.0).max(2.0);
    let series = synth_sine_trend(l + t + args.batch - 1, c, &[period], 0.01, 0.3, args.seed);
    let v = &series.values;
    let inputs = Array3::from_shape_fn((args.batch, l, c), |(b, i, ch)| v[[b + i, ch]]);
    let targets = Array3::from_shape_fn((args.batch, t, c), |(b, i, ch)| v[[b + l + i, ch]]);
    let report = grad_check(&model, inputs.view(), targets.slice(s![.., .., ..]), args.step, args.tol)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?);
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: relative error {:e} at {}[{}] exceeds {:e}",
            report.max_rel_err, report.worst_param, report.worst_index, args.tol
        )))
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub length: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, value_delimiter = ',', default_value = "24,12")]
    pub periods: Vec<f64>,
    /// Linear trend slope per step.
    #[arg(long, default_value_t = 0.001)]
    pub trend: f64,
    /// Standard deviation of the Gaussian noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Amplitude of an extra high-frequency sinusoid; none when absent.
    #[arg(long)]
    pub hf_amplitude: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    pub hf_period: f64,
}

pub fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.length == 0 || args.channels == 0 {
        return Err(CliError::Config("length and channels must be at least 1".into()));
    }
    let mut series = synth_sine_trend(args.length, args.channels, &args.periods, args.trend, args.noise, args.seed);
    if let Some(a) = args.hf_amplitude {
        series = with_high_frequency(series, a, args.hf_period);
    }
    write_csv(&series, &args.out)?;
    println!("wrote {} rows x {} channels to {}", series.len(), series.channels(), args.out.display());
    Ok(())
}
