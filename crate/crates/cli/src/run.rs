//! `train` and `sweep`: fit models and write run artifacts.

use crate::error::CliError;
use crate::settings::{RunArgs, RunSettings};
use dpwmixer::checkpoint::Checkpoint;
use dpwmixer::data::{load_csv, make_splits, CsvOptions, RawSeries, WindowDataset};
use dpwmixer::model::{init_params, DpwModel};
use dpwmixer::training::{train, Metrics, TrainError, TrainReport};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Everything needed to repeat a run bit for bit.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub settings: RunSettings,
    pub seed: u64,
    /// `haar` or `average-pooling`.
    pub pyramid: String,
    pub data_sha256: String,
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    fn new(command: &str, settings: &RunSettings, data_sha256: String) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            settings: settings.clone(),
            seed: settings.train.seed,
            pyramid: if settings.model.use_wavelet { "haar" } else { "average-pooling" }.into(),
            data_sha256,
            artifacts: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub train: Metrics,
    pub val: Metrics,
    pub test: Metrics,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub seconds: f64,
    pub trainable_params: usize,
    /// Per-scale fusion weights, `[N + 1][C]`.
    pub fusion_weights: Vec<Vec<f64>>,
}

impl RunSummary {
    fn new(report: &TrainReport, model: &DpwModel, seconds: f64) -> Result<Self, CliError> {
        let w = model.fusion_weights()?;
        Ok(RunSummary {
            train: report.train,
            val: report.val,
            test: report.test,
            best_epoch: report.best_epoch,
            best_val_mse: report.best_val_mse,
            epochs_run: report.epochs.len(),
            stopped_early: report.stopped_early,
            seconds,
            trainable_params: model.num_trainable(),
            fusion_weights: w.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
    }
}

/// Loads the data named by `settings` and fixes the channel count.
fn prepare(settings: &mut RunSettings) -> Result<(RawSeries, WindowDataset), CliError> {
    let series = load_csv(&settings.data, &CsvOptions::default())?;
    settings.model.channels = series.channels();
    let data =
        make_splits(&series, settings.split_ratios, settings.model.lookback, settings.model.horizon, settings.stride)?;
    Ok((series, data))
}

fn fit(settings: &RunSettings, data: &WindowDataset) -> Result<(DpwModel, TrainReport, f64), TrainError> {
    let mut model = init_params(&settings.model, settings.train.seed).map_err(|e| TrainError::Config(e.to_string()))?;
    let clock = Instant::now();
    let report = train(&mut model, data, &settings.train)?;
    Ok((model, report, clock.elapsed().as_secs_f64()))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes checkpoint, log, summary and manifest of one fitted model.
fn write_run(
    command: &str,
    settings: &RunSettings,
    data: &WindowDataset,
    model: DpwModel,
    report: &TrainReport,
    seconds: f64,
    extra: &[(&str, PathBuf)],
) -> Result<RunSummary, CliError> {
    let out = &settings.out;
    let summary = RunSummary::new(report, &model, seconds)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    Checkpoint { model, scaler: data.scaler().clone() }.save(&ckpt)?;
    let log = out.join(LOG_FILE);
    report.write_log_csv(&log)?;
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;

    let mut manifest = RunManifest::new(command, settings, file_sha256(&settings.data)?);
    manifest.artifacts.insert("checkpoint".into(), ckpt);
    manifest.artifacts.insert("log".into(), log);
    manifest.artifacts.insert("summary".into(), summary_path);
    for (k, v) in extra {
        manifest.artifacts.insert(k.to_string(), v.clone());
    }
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

pub fn cmd_train(args: RunArgs) -> Result<(), CliError> {
    let mut settings = args.resolve()?;
    let (_, data) = prepare(&mut settings)?;
    create_out(&settings.out)?;
    let (model, report, seconds) = fit(&settings, &data)?;
    let s = write_run("train", &settings, &data, model, &report, seconds, &[])?;
    println!(
        "test mse {:.6} mae {:.6} | val mse {:.6} | best epoch {} of {} | {:.1}s | {}",
        s.test.mse,
        s.test.mae,
        s.val.mse,
        s.best_epoch,
        s.epochs_run,
        seconds,
        settings.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, clap::Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Learning rates to try.
    #[arg(long, value_delimiter = ',', default_value = "1e-4,5e-4,1e-3")]
    pub lrs: Vec<f64>,
    /// Batch sizes to try.
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub batch_sizes: Vec<usize>,
}

/// Trains every learning-rate / batch-size pair and keeps the lowest validation MSE.
pub fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    if args.lrs.is_empty() || args.batch_sizes.is_empty() {
        return Err(CliError::Config("lrs and batch-sizes must be nonempty".into()));
    }
    let mut settings = args.run.resolve()?;
    let (_, data) = prepare(&mut settings)?;
    create_out(&settings.out)?;

    let mut table = String::from("learning_rate,batch_size,status,best_epoch,val_mse,test_mse,seconds\n");
    let mut best: Option<(RunSettings, DpwModel, TrainReport, f64)> = None;
    for &lr in &args.lrs {
        for &batch_size in &args.batch_sizes {
            let mut trial = settings.clone();
            trial.train.learning_rate = lr;
            trial.train.batch_size = batch_size;
            trial.train.validate()?;
            match fit(&trial, &data) {
                Ok((model, report, secs)) => {
                    table.push_str(&format!(
                        "{lr:e},{batch_size},ok,{},{},{},{secs:.3}\n",
                        report.best_epoch, report.val.mse, report.test.mse
                    ));
                    log::info!("lr {lr:e} batch {batch_size}: val mse {:.6}", report.val.mse);
                    if best.as_ref().is_none_or(|b| report.val.mse < b.2.val.mse) {
                        best = Some((trial, model, report, secs));
                    }
                }
                Err(e @ TrainError::Divergence { .. }) => {
                    log::warn!("lr {lr:e} batch {batch_size}: {e}");
                    table.push_str(&format!("{lr:e},{batch_size},diverged,,,,\n"));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let sweep_path = settings.out.join(SWEEP_FILE);
    fs::write(&sweep_path, &table).map_err(|e| CliError::io(&sweep_path, e))?;
    let Some((trial, model, report, secs)) = best else {
        return Err(CliError::Numeric("every sweep configuration diverged".into()));
    };
    let s = write_run("sweep", &trial, &data, model, &report, secs, &[("sweep", sweep_path)])?;
    println!(
        "best lr {:e} batch {} | val mse {:.6} | test mse {:.6} mae {:.6}",
        trial.train.learning_rate, trial.train.batch_size, s.val.mse, s.test.mse, s.test.mae
    );
    Ok(())
}
