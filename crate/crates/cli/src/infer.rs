//! `eval` and `forecast`: apply a checkpoint to a CSV series.

use crate::error::CliError;
use crate::run::{file_sha256, write_json};
use dpwmixer::checkpoint::Checkpoint;
use dpwmixer::data::{
    load_csv, write_predictions, CsvOptions, PredictionRow, RawSeries, Split, SplitBounds, SplitRatios, WindowDataset,
};
use dpwmixer::training::evaluate;
use ndarray::{s, ArrayView2};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Which split to score.
    #[arg(long, default_value = "test")]
    pub subset: Split,
    /// Chronological train,val,test ratios; must match training.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    pub split: SplitRatios,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Directory for the metrics JSON and the predictions CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub subset: String,
    pub split: String,
    pub windows: usize,
    /// On the standardized scale.
    pub mse: f64,
    pub mae: f64,
    pub checkpoint: PathBuf,
    pub data_sha256: String,
}

fn load_matching(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, RawSeries), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let series = load_csv(data, &CsvOptions::default())?;
    let expected = ckpt.model.config.channels;
    if series.channels() != expected {
        return Err(CliError::Data(format!(
            "checkpoint {} expects {expected} channels but {} has {}",
            checkpoint.display(),
            data.display(),
            series.channels()
        )));
    }
    Ok((ckpt, series))
}

/// Forecast of the window whose look-back starts at `start`, in original units.
fn window_rows(
    ckpt: &Checkpoint,
    series: &RawSeries,
    start: usize,
    scaled_pred: ArrayView2<f64>,
) -> Result<Vec<PredictionRow>, CliError> {
    let pred = ckpt.scaler.invert(scaled_pred)?;
    let l = ckpt.model.config.lookback;
    let mut rows = Vec::with_capacity(pred.len());
    for (t, row) in pred.rows().into_iter().enumerate() {
        for (c, &y_pred) in row.iter().enumerate() {
            let y_true = series.values.get((start + l + t, c)).copied().unwrap_or(f64::NAN);
            rows.push(PredictionRow {
                window_id: start,
                horizon_step: t,
                channel: series.channel_names[c].clone(),
                y_true,
                y_pred,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    args.split.validate().map_err(CliError::Config)?;
    if args.stride == 0 || args.batch_size == 0 {
        return Err(CliError::Config("stride and batch-size must be at least 1".into()));
    }
    let (ckpt, series) = load_matching(&args.checkpoint, &args.data)?;
    let cfg = &ckpt.model.config;
    let scaled = ckpt.scaler.apply(series.values.view())?;
    let (train_end, val_end) = args.split.boundaries(series.len());
    let bounds = SplitBounds { train_end, val_end, len: series.len() };
    let data = WindowDataset::new(scaled, ckpt.scaler.clone(), bounds, cfg.lookback, cfg.horizon, args.stride)?;
    let metrics = evaluate(&ckpt.model, &data, args.subset, args.batch_size)?;
    let starts = data.windows(args.subset);
    println!("{} mse {:.6} mae {:.6} over {} windows", args.subset.name(), metrics.mse, metrics.mae, starts.len());

    let Some(out) = &args.out else { return Ok(()) };
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut rows = Vec::new();
    for chunk in starts.chunks(args.batch_size) {
        let batch = data.gather(chunk);
        let pred = ckpt.model.predict(batch.inputs.view())?;
        for (b, &start) in chunk.iter().enumerate() {
            rows.extend(window_rows(&ckpt, &series, start, pred.slice(s![b, .., ..]))?);
        }
    }
    let name = args.subset.name();
    write_predictions(out.join(format!("predictions_{name}.csv")), &rows)?;
    let summary = EvalSummary {
        subset: name.into(),
        split: args.split.to_string(),
        windows: starts.len(),
        mse: metrics.mse,
        mae: metrics.mae,
        checkpoint: args.checkpoint.clone(),
        data_sha256: file_sha256(&args.data)?,
    };
    write_json(&out.join(format!("eval_{name}.json")), &summary)
}

#[derive(Debug, Clone, clap::Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// First row of the look-back window; the forecast covers the `T` rows after it.
    #[arg(long)]
    pub start_row: usize,
    /// Predictions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_forecast(args: ForecastArgs) -> Result<(), CliError> {
    let (ckpt, series) = load_matching(&args.checkpoint, &args.data)?;
    let l = ckpt.model.config.lookback;
    let end = args.start_row.checked_add(l).filter(|&e| e <= series.len()).ok_or_else(|| {
        CliError::Data(format!(
            "insufficient history: the look-back needs rows {}..{} but {} has {} rows",
            args.start_row,
            args.start_row.saturating_add(l),
            args.data.display(),
            series.len()
        ))
    })?;
    let window = ckpt.scaler.apply(series.values.slice(s![args.start_row..end, ..]))?;
    let pred = ckpt.model.forward(window.view())?;
    let rows = window_rows(&ckpt, &series, args.start_row, pred.view())?;
    write_predictions(&args.out, &rows)?;
    println!(
        "wrote {} predictions for rows {}..{} to {}",
        rows.len(),
        end,
        end + ckpt.model.config.horizon,
        args.out.display()
    );
    Ok(())
}
