use super::*;
use crate::data::{make_splits, synth_sine_trend, SplitRatios};
use crate::model::{init_params, ModelConfig};
use ndarray::{array, s, Array3};
use rand::{Rng, SeedableRng};

fn small_data() -> WindowDataset {
    let series = synth_sine_trend(400, 2, &[12.0], 0.001, 0.05, 1);
    make_splits(&series, SplitRatios::default(), 16, 4, 1).unwrap()
}

fn small_model() -> DpwModel {
    let cfg = ModelConfig {
        lookback: 16,
        horizon: 4,
        channels: 2,
        n_scales: 1,
        patch_len: 4,
        hidden_dim: 8,
        mixer_layers: 1,
        ..ModelConfig::default()
    };
    init_params(&cfg, 7).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_examples() {
    let p = array![[1.0, 2.0]];
    let t = array![[1.0, 4.0]];
    assert_eq!(mse_loss(p.view(), t.view()).unwrap(), 2.0);
    assert_eq!(mae_metric(p.view(), t.view()).unwrap(), 1.0);
    assert_eq!(mse_loss(p.view(), p.view()).unwrap(), 0.0);
    assert_eq!(mae_metric(p.view(), p.view()).unwrap(), 0.0);
    assert!(mse_loss(p.view(), array![[1.0], [2.0]].view()).is_err());
}

#[test]
fn mse_gradient_is_closed_form() {
    let pred = vec![0.5, -1.0, 2.0, 0.25, 3.0, -0.5];
    let target = vec![1.0, 1.0, -1.0, 0.0, 2.0, 0.5];
    let mut tape = Tape::new();
    let p = tape.leaf(crate::tensor::Tensor::new(vec![3, 2], pred.clone()).unwrap().requiring_grad());
    let t = tape.constant(vec![3, 2], target.clone()).unwrap();
    let l = tape_mse(&mut tape, p, t).unwrap();
    tape.backward(l).unwrap();
    let g = tape.grad(p).unwrap();
    for i in 0..6 {
        let closed = 2.0 * (pred[i] - target[i]) / 6.0;
        assert!((g[i] - closed).abs() < 1e-15);
        let f = |d: f64| {
            let mut q = pred.clone();
            q[i] += d;
            let a = ndarray::Array2::from_shape_vec((3, 2), q).unwrap();
            let b = ndarray::Array2::from_shape_vec((3, 2), target.clone()).unwrap();
            mse_loss(a.view(), b.view()).unwrap()
        };
        let n = (f(1e-5) - f(-1e-5)) / 2e-5;
        assert!((g[i] - n).abs() / g[i].abs().max(n.abs()).max(1e-8) <= 1e-6);
    }
}

#[test]
fn config_validation_lists_problems() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig { batch_size: 0, patience: 11, learning_rate: f64::NAN, ..TrainConfig::default() };
    let msg = bad.validate().unwrap_err().to_string();
    assert!(msg.contains("batch_size") && msg.contains("patience") && msg.contains("learning_rate"), "{msg}");
}

#[test]
fn training_reduces_loss_and_records_epochs() {
    let data = small_data();
    let mut m = small_model();
    let before = evaluate(&m, &data, Split::Val, 64).unwrap().mse;
    let report = train(&mut m, &data, &quick(3)).unwrap();
    assert_eq!(report.epochs.len(), 3);
    assert!(report.best_val_mse < before, "{} !< {before}", report.best_val_mse);
    assert!(report.epochs.iter().all(|e| e.train_mse.is_finite() && e.val_mse.is_finite()));
    let min = report.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_mse, min);
    assert_eq!(report.epochs[report.best_epoch].val_mse, min);
    assert!((report.val.mse - min).abs() <= 1e-12);
    let lrs: Vec<f64> = report.epochs.iter().map(|e| e.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn frozen_params_stop_after_patience_plus_one_evaluations() {
    let data = small_data();
    let mut m = small_model();
    let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 10, patience: 3, ..quick(10) };
    let mut evaluations = 0;
    let report = train_with(&mut m, &data, &cfg, |_, _| evaluations += 1).unwrap();
    assert_eq!(evaluations, 4);
    assert_eq!(report.epochs.len(), 4);
    assert!(report.stopped_early);
    assert_eq!(report.best_epoch, 0);
    assert_eq!(m, small_model());
}

#[test]
fn best_epoch_parameters_are_restored() {
    let data = small_data();
    let mut m = small_model();
    let mut snapshots = Vec::new();
    let cfg = TrainConfig { learning_rate: 3e-2, ..quick(6) };
    let report = train_with(&mut m, &data, &cfg, |_, model| snapshots.push(model.clone())).unwrap();
    assert_eq!(m, snapshots[report.best_epoch]);
}

#[test]
fn seeded_training_is_bitwise_deterministic() {
    let data = small_data();
    let mut a = small_model();
    let mut b = small_model();
    let ra = train(&mut a, &data, &quick(2)).unwrap();
    let rb = train(&mut b, &data, &quick(2)).unwrap();
    assert_eq!(a, b);
    let strip =
        |r: &TrainReport| r.epochs.iter().map(|e| (e.train_mse.to_bits(), e.val_mse.to_bits())).collect::<Vec<_>>();
    assert_eq!(strip(&ra), strip(&rb));
    assert_eq!(ra.test, rb.test);

    let mut c = small_model();
    train(&mut c, &data, &TrainConfig { seed: 6, ..quick(2) }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn held_out_targets_do_not_influence_updates() {
    let data = small_data();
    let mut perturbed_values = data.values().to_owned();
    let train_end = data.bounds().train_end;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    perturbed_values.slice_mut(s![train_end.., ..]).mapv_inplace(|v| v + rng.random_range(-3.0..3.0));
    let perturbed = WindowDataset::new(perturbed_values, data.scaler().clone(), data.bounds(), 16, 4, 1).unwrap();

    let cfg = quick(3);
    let trajectory = |d: &WindowDataset| {
        let mut m = small_model();
        let mut seen = Vec::new();
        train_with(&mut m, d, &cfg, |r, model| seen.push((r.train_mse, model.clone()))).unwrap();
        seen
    };
    let a = trajectory(&data);
    let b = trajectory(&perturbed);
    assert_eq!(a, b);
}

#[test]
fn divergence_names_the_batch() {
    let data = small_data();
    let mut m = small_model();
    let cfg = TrainConfig { learning_rate: 1e300, ..quick(2) };
    let err = train(&mut m, &data, &cfg).unwrap_err();
    match err {
        TrainError::Divergence { epoch, batch } => {
            assert_eq!(epoch, 0);
            assert!(batch >= 1);
            assert!(err.to_string().contains(&format!("batch {batch}")));
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn empty_validation_split_is_rejected() {
    let series = synth_sine_trend(200, 2, &[12.0], 0.0, 0.0, 1);
    let ratios: SplitRatios = "0.9,0.0,0.1".parse().unwrap();
    if let Ok(data) = make_splits(&series, ratios, 16, 4, 1) {
        assert!(matches!(train(&mut small_model(), &data, &quick(1)), Err(TrainError::EmptySplit(Split::Val))));
    }
}

#[test]
fn log_csv_has_one_row_per_epoch() {
    let data = small_data();
    let mut m = small_model();
    let report = train(&mut m, &data, &quick(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    report.write_log_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_mse,val_mse,lr,seconds");
    assert_eq!(lines.len(), 3);
}

fn tiny_batch() -> (Array3<f64>, Array3<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = Array3::from_shape_fn((2, 16, 2), |_| rng.random_range(-1.0..1.0));
    let y = Array3::from_shape_fn((2, 4, 2), |_| rng.random_range(-1.0..1.0));
    (x, y)
}

#[test]
fn grad_check_on_tiny_config() {
    let (x, y) = tiny_batch();
    let r = grad_check(&small_model(), x.view(), y.view(), 1e-5, 1e-4).unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.n_checked, small_model().num_trainable());
}

#[test]
fn grad_check_linear_only() {
    let (x, y) = tiny_batch();
    let mut m = small_model();
    m.config.use_local_path = false;
    let r = grad_check(&m, x.view(), y.view(), 1e-5, 1e-6).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn grad_check_step_sensitivity() {
    let (x, y) = tiny_batch();
    let m = small_model();
    let a = grad_check(&m, x.view(), y.view(), 1e-5, 1e-4).unwrap();
    let b = grad_check(&m, x.view(), y.view(), 5e-6, 1e-4).unwrap();
    assert!(b.max_rel_err <= 10.0 * a.max_rel_err, "{} vs {}", b.max_rel_err, a.max_rel_err);
}
