//! Per-window instance normalization and dataset-level standardization.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to every standard deviation.
pub const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormalizationError {
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("cannot compute statistics of an empty series")]
    Empty,
}

/// Per-channel mean and (population) standard deviation of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

fn column_stats(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    x.axis_iter(Axis(1))
        .map(|col| {
            let shift = col[0];
            let mean = shift + col.iter().map(|v| v - shift).sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt().max(EPS))
        })
        .unzip()
}

/// Standardizes each channel of a look-back window by its own statistics.
pub fn revin_normalize(x: ArrayView2<f64>) -> Result<(Array2<f64>, InstanceStats), NormalizationError> {
    if x.nrows() == 0 {
        return Err(NormalizationError::Empty);
    }
    let (mu, sigma) = column_stats(x);
    let mut out = x.to_owned();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|v| (v - mu[c]) / sigma[c]);
    }
    Ok((out, InstanceStats { mu, sigma }))
}

/// Restores the units of a normalized forecast: `y·σ + μ` per channel.
pub fn revin_denormalize(y: ArrayView2<f64>, stats: &InstanceStats) -> Result<Array2<f64>, NormalizationError> {
    if y.ncols() != stats.mu.len() {
        return Err(NormalizationError::ChannelMismatch { expected: stats.mu.len(), got: y.ncols() });
    }
    let mut out = y.to_owned();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|v| v * stats.sigma[c] + stats.mu[c]);
    }
    Ok(out)
}

/// Channelwise z-score fitted on the training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DatasetScaler {
    pub fn fit(train: ArrayView2<f64>) -> Result<Self, NormalizationError> {
        if train.nrows() == 0 {
            return Err(NormalizationError::Empty);
        }
        let (mean, std) = column_stats(train);
        Ok(Self { mean, std })
    }

    /// Identity scaler for `channels` channels.
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: ArrayView2<f64>) -> Result<(), NormalizationError> {
        if x.ncols() != self.channels() {
            return Err(NormalizationError::ChannelMismatch { expected: self.channels(), got: x.ncols() });
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NormalizationError> {
        self.check(x)?;
        let mut out = x.to_owned();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[c]) / self.std[c]);
        }
        Ok(out)
    }

    pub fn invert(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NormalizationError> {
        self.check(x)?;
        let mut out = x.to_owned();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.std[c] + self.mean[c]);
        }
        Ok(out)
    }
}

pub fn fit_scaler(train: ArrayView2<f64>) -> Result<DatasetScaler, NormalizationError> {
    DatasetScaler::fit(train)
}

pub fn apply_scaler(x: ArrayView2<f64>, scaler: &DatasetScaler) -> Result<Array2<f64>, NormalizationError> {
    scaler.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = array![[2.0], [2.0], [2.0]];
        let (n, stats) = revin_normalize(x.view()).unwrap();
        assert_eq!(n, array![[0.0], [0.0], [0.0]]);
        assert_eq!(stats.mu, vec![2.0]);
        assert_eq!(stats.sigma, vec![EPS]);
    }

    #[test]
    fn large_constant_channel_keeps_exact_mean() {
        for v in [1e4 + 0.1, -9876.54321, 0.3, 1e15 / 7.0] {
            let x = Array2::from_elem((96, 1), v);
            let (n, stats) = revin_normalize(x.view()).unwrap();
            assert_eq!(stats.mu, vec![v]);
            assert!(n.iter().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn two_point_window() {
        let (n, stats) = revin_normalize(array![[1.0], [3.0]].view()).unwrap();
        assert_eq!(stats.mu, vec![2.0]);
        assert_eq!(stats.sigma, vec![1.0]);
        assert_eq!(n, array![[-1.0], [1.0]]);
    }

    #[test]
    fn denormalize_examples() {
        let stats = InstanceStats { mu: vec![3.0, -1.0], sigma: vec![2.0, 0.5] };
        let y = revin_denormalize(Array2::zeros((4, 2)).view(), &stats).unwrap();
        assert!(y.rows().into_iter().all(|r| r.to_vec() == vec![3.0, -1.0]));

        let id = InstanceStats { mu: vec![0.0], sigma: vec![1.0] };
        let x = array![[1.5], [-2.0]];
        assert_eq!(revin_denormalize(x.view(), &id).unwrap(), x);

        let err = revin_denormalize(Array2::zeros((2, 3)).view(), &stats);
        assert!(matches!(err, Err(NormalizationError::ChannelMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn scaler_examples() {
        let s = DatasetScaler::fit(array![[0.0, 5.0], [2.0, 5.0]].view()).unwrap();
        assert_eq!(s.mean, vec![1.0, 5.0]);
        assert_eq!(s.std, vec![1.0, EPS]);
        assert_eq!(s.apply(array![[3.0, 5.0]].view()).unwrap(), array![[2.0, 0.0]]);
        assert!(DatasetScaler::fit(Array2::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn scaled_training_split_is_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x =
            Array2::from_shape_fn((500, 3), |(_, c)| rng.random_range(-1.0..1.0) * (c + 1) as f64 + 10.0 * c as f64);
        let s = fit_scaler(x.view()).unwrap();
        let z = apply_scaler(x.view(), &s).unwrap();
        for col in z.axis_iter(Axis(1)) {
            let mean = col.sum() / 500.0;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0).sqrt();
            assert!(mean.abs() <= 1e-10);
            assert!((std - 1.0).abs() <= 1e-10);
        }
        let back = s.invert(z.view()).unwrap();
        assert!((&back - &x).iter().all(|v| v.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn revin_round_trip(len in 1usize..64, channels in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((len, channels), |_| rng.random_range(-50.0..50.0));
            let (n, stats) = revin_normalize(x.view()).unwrap();
            let back = revin_denormalize(n.view(), &stats).unwrap();
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for (c, col) in n.axis_iter(Axis(1)).enumerate() {
                let mean = col.sum() / len as f64;
                prop_assert!(mean.abs() <= 1e-10);
                if stats.sigma[c] > 1e-3 {
                    let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
                    prop_assert!((std - 1.0).abs() <= 1e-8);
                }
            }
        }
    }
}
