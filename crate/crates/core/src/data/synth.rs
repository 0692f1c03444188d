use super::RawSeries;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

/// Linear trend plus a sum of sinusoids plus Gaussian noise, per channel.
///
/// The `k`-th period has amplitude `1/(k+1)`; channels differ by phase.
pub fn synth_sine_trend(
    length: usize,
    channels: usize,
    periods: &[f64],
    trend_slope: f64,
    noise_sigma: f64,
    seed: u64,
) -> RawSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut values = Array2::zeros((length, channels));
    for c in 0..channels {
        for t in 0..length {
            let tf = t as f64;
            let seasonal: f64 = periods
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let phase = PI * (c as f64) * (k as f64 + 1.0) / (channels as f64 + 1.0);
                    (2.0 * PI * tf / p + phase).sin() / (k as f64 + 1.0)
                })
                .sum();
            let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values[[t, c]] = trend_slope * tf + seasonal + eps;
        }
    }
    RawSeries::new(values)
}

/// Adds `amplitude · cos(2π t / period)` to every channel.
pub fn with_high_frequency(mut series: RawSeries, amplitude: f64, period: f64) -> RawSeries {
    for (t, mut row) in series.values.rows_mut().into_iter().enumerate() {
        let v = amplitude * (2.0 * PI * t as f64 / period).cos();
        row.mapv_inplace(|x| x + v);
    }
    series
}
