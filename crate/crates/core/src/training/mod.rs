//! Loss, optimizer, schedule, early stopping and the epoch loop.

mod gradcheck;
mod optim;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, cosine_lr, AdamState, EarlyStopping};

use crate::data::{Split, WindowDataset};
use crate::model::{to_rows, DpwModel, ModelError};
use crate::tensor::{Tape, TensorError, Var};
use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the {} split has no windows", .0.name())]
    EmptySplit(Split),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot write training log {path}: {message}")]
    Log { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Seeds the per-epoch window shuffle.
    pub seed: u64,
    pub eta_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 10,
            patience: 5,
            seed: 2024,
            eta_min: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so parameters can be frozen.
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut errs = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning_rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be at least 1".to_string());
        }
        if self.max_epochs == 0 {
            errs.push("max_epochs must be at least 1".to_string());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            errs.push(format!("patience must be in 1..={}, got {}", self.max_epochs, self.patience));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.learning_rate) {
            errs.push("eta_min must lie in [0, learning_rate]".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errs.push("adam betas must lie in [0, 1)".to_string());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            errs.push("adam_eps must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch training losses seen during the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    /// Metrics of the restored best parameters.
    pub train: Metrics,
    pub val: Metrics,
    pub test: Metrics,
}

impl TrainReport {
    /// Writes `epoch,train_mse,val_mse,lr,seconds` rows.
    pub fn write_log_csv(&self, path: &Path) -> Result<(), TrainError> {
        let err = |e: csv::Error| TrainError::Log { path: path.display().to_string(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for r in &self.epochs {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|e| TrainError::Log { path: path.display().to_string(), message: e.to_string() })
    }
}

/// Mean squared error over all elements.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64, TensorError> {
    check_pair("mse_loss", pred, target)?;
    Ok(pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute error over all elements.
pub fn mae_metric(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64, TensorError> {
    check_pair("mae_metric", pred, target)?;
    Ok(pred.iter().zip(target.iter()).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

fn check_pair(op: &'static str, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(), TensorError> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(TensorError::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    Ok(())
}

/// Differentiable mean squared error between two tape values.
pub fn tape_mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, TensorError> {
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// MSE and MAE of the model over every window of a split, on the scaled series.
pub fn evaluate(
    model: &DpwModel,
    data: &WindowDataset,
    split: Split,
    batch_size: usize,
) -> Result<Metrics, TrainError> {
    let starts = data.windows(split);
    if starts.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for chunk in starts.chunks(batch_size.max(1)) {
        let batch = data.gather(chunk);
        let pred = model.predict(batch.inputs.view())?;
        for (p, t) in pred.iter().zip(batch.targets.iter()) {
            se += (p - t) * (p - t);
            ae += (p - t).abs();
        }
        n += pred.len();
    }
    Ok(Metrics { mse: se / n as f64, mae: ae / n as f64 })
}

fn is_non_finite(e: &ModelError) -> bool {
    matches!(e, ModelError::Tensor(TensorError::NonFinite { .. }))
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step(
    model: &mut DpwModel,
    data: &WindowDataset,
    starts: &[usize],
    adam: &mut AdamState,
    lr: f64,
) -> Result<f64, ModelError> {
    let batch = data.gather(starts);
    let mut tape = Tape::new();
    let pass = model.forward_tape(&mut tape, batch.inputs.view(), true)?;
    let shape = tape.shape(pass.prediction).to_vec();
    let target = tape.constant(shape, to_rows(batch.targets.view()))?;
    let loss = tape_mse(&mut tape, pass.prediction, target)?;
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;

    let cfg = model.config.clone();
    let mut params: Vec<&mut [f64]> = Vec::new();
    let mut grads: Vec<&[f64]> = Vec::new();
    for (p, (_, _, v)) in model.named_params_mut().into_iter().zip(&pass.params.vars) {
        if p.group.trainable(&cfg) {
            params.push(p.tensor.data_mut());
            grads.push(tape.grad(*v).expect("trainable leaf has a gradient"));
        }
    }
    adam_step(&mut params, &grads, adam, lr);
    Ok(value)
}

/// Element counts of the trainable parameters, in [`DpwModel::named_params`] order.
pub fn trainable_sizes(model: &DpwModel) -> Vec<usize> {
    model.named_params().iter().filter(|p| p.group.trainable(&model.config)).map(|p| p.tensor.numel()).collect()
}

/// Trains with a callback after every epoch.
pub fn train_with(
    model: &mut DpwModel,
    data: &WindowDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &DpwModel),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    for split in [Split::Train, Split::Val] {
        if data.windows(split).is_empty() {
            return Err(TrainError::EmptySplit(split));
        }
    }
    let mut adam = AdamState::new(&trainable_sizes(model), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = data.windows(Split::Train).to_vec();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let clock = Instant::now();
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.learning_rate, cfg.eta_min);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let loss = match train_step(model, data, chunk, &mut adam, lr) {
                Ok(l) => l,
                Err(e) if is_non_finite(&e) => f64::NAN,
                Err(e) => return Err(e.into()),
            };
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: b });
            }
            total += loss;
            batches += 1;
        }
        let val = match evaluate(model, data, Split::Val, cfg.batch_size) {
            Ok(m) => m.mse,
            Err(TrainError::Model(e)) if is_non_finite(&e) => f64::NAN,
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_mse: total / batches as f64,
            val_mse: val,
            lr,
            seconds: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_mse {:.6} val_mse {:.6} lr {:.3e} ({:.2}s)",
            record.train_mse,
            record.val_mse,
            lr,
            record.seconds
        );
        if stopper.update(epoch, val) {
            best.copy_params_from(model);
        }
        on_epoch(&record, model);
        epochs.push(record);
        if stopper.should_stop() {
            stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }

    let Some(best_epoch) = stopper.best_epoch else {
        return Err(TrainError::Divergence { epoch: epochs.len().saturating_sub(1), batch: 0 });
    };
    model.copy_params_from(&best);
    let train = evaluate(model, data, Split::Train, cfg.batch_size)?;
    let val = evaluate(model, data, Split::Val, cfg.batch_size)?;
    let test = if data.windows(Split::Test).is_empty() {
        Metrics { mse: f64::NAN, mae: f64::NAN }
    } else {
        evaluate(model, data, Split::Test, cfg.batch_size)?
    };
    Ok(TrainReport { epochs, best_epoch, best_val_mse: stopper.best, stopped_early, train, val, test })
}

/// Trains `model` in place and restores its best-validation parameters.
pub fn train(model: &mut DpwModel, data: &WindowDataset, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    train_with(model, data, cfg, |_, _| {})
}

#[cfg(test)]
mod tests;
