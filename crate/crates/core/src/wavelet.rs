//! Haar wavelet analysis of multichannel series.
//!
//! Series are `length × channels` arrays; every channel is transformed
//! independently. Odd-length inputs are extended by repeating the final
//! sample once, which for a length-2 filter is the same as mirror padding.

use ndarray::{s, Array2, ArrayView2, Axis};
use thiserror::Error;

pub const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveletError {
    #[error("cannot decompose an empty series")]
    Empty,
    #[error("approximation shape {approx:?} does not match detail shape {detail:?}")]
    ShapeMismatch { approx: Vec<usize>, detail: Vec<usize> },
}

/// Fixed Haar analysis filters.
#[derive(Debug, Clone, Copy)]
pub struct HaarFilters;

impl HaarFilters {
    pub const LOW: [f64; 2] = [INV_SQRT2, INV_SQRT2];
    pub const HIGH: [f64; 2] = [INV_SQRT2, -INV_SQRT2];
}

/// Sum of squares over every element.
pub fn energy(x: ArrayView2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Appends one copy of the last row when the length is odd.
pub fn pad_tail_even(x: ArrayView2<f64>) -> Array2<f64> {
    let len = x.nrows();
    if len.is_multiple_of(2) {
        return x.to_owned();
    }
    let mut out = Array2::zeros((len + 1, x.ncols()));
    out.slice_mut(s![..len, ..]).assign(&x);
    out.row_mut(len).assign(&x.row(len - 1));
    out
}

/// One analysis level: `(approximation, detail)`, each `⌈len/2⌉ × C`.
pub fn dwt_step(x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>), WaveletError> {
    if x.nrows() == 0 {
        return Err(WaveletError::Empty);
    }
    let padded = pad_tail_even(x);
    let half = padded.nrows() / 2;
    let channels = padded.ncols();
    let mut approx = Array2::zeros((half, channels));
    let mut detail = Array2::zeros((half, channels));
    let [l0, l1] = HaarFilters::LOW;
    let [h0, h1] = HaarFilters::HIGH;
    for i in 0..half {
        for c in 0..channels {
            let (a, b) = (padded[[2 * i, c]], padded[[2 * i + 1, c]]);
            approx[[i, c]] = l0 * a + l1 * b;
            detail[[i, c]] = h0 * a + h1 * b;
        }
    }
    Ok((approx, detail))
}

/// Exact inverse of [`dwt_step`], returning the (tail-padded) parent.
pub fn idwt_step(approx: ArrayView2<f64>, detail: ArrayView2<f64>) -> Result<Array2<f64>, WaveletError> {
    if approx.shape() != detail.shape() {
        return Err(WaveletError::ShapeMismatch { approx: approx.shape().to_vec(), detail: detail.shape().to_vec() });
    }
    let (half, channels) = approx.dim();
    let mut out = Array2::zeros((2 * half, channels));
    for i in 0..half {
        for c in 0..channels {
            let (a, d) = (approx[[i, c]], detail[[i, c]]);
            out[[2 * i, c]] = (a + d) * INV_SQRT2;
            out[[2 * i + 1, c]] = (a - d) * INV_SQRT2;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletLevel {
    pub approx: Array2<f64>,
    pub detail: Array2<f64>,
}

/// Recursive approximation pyramid.
///
/// `scales_input[0]` is the input; `scales_input[j]` for `j ≥ 1` is
/// `levels[j - 1].approx`. Details are kept for inspection only.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub levels: Vec<WaveletLevel>,
    pub scales_input: Vec<Array2<f64>>,
}

/// Energy bookkeeping for one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelEnergy {
    pub level: usize,
    /// Energy of the tail-padded parent series.
    pub parent: f64,
    pub approx: f64,
    pub detail: f64,
}

impl LevelEnergy {
    /// `|parent − (approx + detail)| / parent`, zero for a silent parent.
    pub fn relative_gap(&self) -> f64 {
        let gap = (self.parent - self.approx - self.detail).abs();
        if self.parent == 0.0 {
            gap
        } else {
            gap / self.parent
        }
    }
}

impl WaveletPyramid {
    pub fn n_scales(&self) -> usize {
        self.levels.len()
    }

    pub fn scale_lengths(&self) -> Vec<usize> {
        self.scales_input.iter().map(|s| s.nrows()).collect()
    }

    pub fn energy_ledger(&self) -> Vec<LevelEnergy> {
        self.levels
            .iter()
            .enumerate()
            .map(|(j, lvl)| LevelEnergy {
                level: j + 1,
                parent: energy(pad_tail_even(self.scales_input[j].view()).view()),
                approx: energy(lvl.approx.view()),
                detail: energy(lvl.detail.view()),
            })
            .collect()
    }
}

fn warn_if_degenerate(len: usize, level: usize) {
    if len == 1 {
        log::warn!("pyramid level {level} decomposes a length-1 series; the coarser scale is degenerate");
    }
}

/// Applies [`dwt_step`] `n_scales` times to successive approximations.
pub fn build_pyramid(x: ArrayView2<f64>, n_scales: usize) -> Result<WaveletPyramid, WaveletError> {
    if x.nrows() == 0 {
        return Err(WaveletError::Empty);
    }
    let mut scales_input = vec![x.to_owned()];
    let mut levels = Vec::with_capacity(n_scales);
    for j in 0..n_scales {
        warn_if_degenerate(scales_input[j].nrows(), j + 1);
        let (approx, detail) = dwt_step(scales_input[j].view())?;
        scales_input.push(approx.clone());
        levels.push(WaveletLevel { approx, detail });
    }
    Ok(WaveletPyramid { levels, scales_input })
}

/// Window-2, stride-2 mean with the same tail rule as [`dwt_step`].
pub fn avg_pool_step(x: ArrayView2<f64>) -> Result<Array2<f64>, WaveletError> {
    if x.nrows() == 0 {
        return Err(WaveletError::Empty);
    }
    let padded = pad_tail_even(x);
    let half = padded.nrows() / 2;
    let mut out = Array2::zeros((half, padded.ncols()));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (a, b) = (padded.row(2 * i), padded.row(2 * i + 1));
        row.assign(&((&a + &b) * 0.5));
    }
    Ok(out)
}

/// Pooling counterpart of [`build_pyramid`]: `[x, pool(x), pool²(x), …]`.
pub fn avg_pool_pyramid(x: ArrayView2<f64>, n_scales: usize) -> Result<Vec<Array2<f64>>, WaveletError> {
    if x.nrows() == 0 {
        return Err(WaveletError::Empty);
    }
    let mut out = vec![x.to_owned()];
    for j in 0..n_scales {
        warn_if_degenerate(out[j].nrows(), j + 1);
        let next = avg_pool_step(out[j].view())?;
        out.push(next);
    }
    Ok(out)
}

/// Series length at every scale `0..=n_scales` under the padding rule.
pub fn scale_lengths(len: usize, n_scales: usize) -> Vec<usize> {
    let mut out = vec![len];
    for _ in 0..n_scales {
        let prev = *out.last().unwrap();
        out.push(prev.div_ceil(2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f64]) -> Array2<f64> {
        Array1::from(values.to_vec()).insert_axis(Axis(1))
    }

    fn close(a: &Array2<f64>, b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    fn random_series(len: usize, channels: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((len, channels), |_| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn filters_are_orthonormal() {
        let dot: f64 = HaarFilters::LOW.iter().zip(HaarFilters::HIGH).map(|(a, b)| a * b).sum();
        assert_eq!(dot, 0.0);
        for f in [HaarFilters::LOW, HaarFilters::HIGH] {
            assert!((f.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dwt_two_samples() {
        let (a, d) = dwt_step(column(&[1.0, 3.0]).view()).unwrap();
        close(&a, &[2.0 * 2f64.sqrt()], 1e-14);
        close(&d, &[-(2f64.sqrt())], 1e-14);
        assert!((energy(a.view()) - 8.0).abs() < 1e-12);
        assert!((energy(d.view()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dwt_single_sample_is_padded() {
        let (a, d) = dwt_step(column(&[4.0]).view()).unwrap();
        close(&a, &[4.0 * 2f64.sqrt()], 1e-14);
        close(&d, &[0.0], 0.0);
    }

    #[test]
    fn dwt_four_samples() {
        let (a, d) = dwt_step(column(&[5.0, 1.0, 2.0, 8.0]).view()).unwrap();
        close(&a, &[4.242640687119285, 7.0710678118654755], 1e-14);
        close(&d, &[2.8284271247461903, -4.242640687119285], 1e-14);
    }

    #[test]
    fn dwt_rejects_empty() {
        let x = Array2::<f64>::zeros((0, 2));
        assert_eq!(dwt_step(x.view()), Err(WaveletError::Empty));
        assert!(build_pyramid(x.view(), 2).is_err());
        assert!(avg_pool_pyramid(x.view(), 2).is_err());
    }

    #[test]
    fn idwt_examples() {
        let x = column(&[5.0, 1.0, 2.0, 8.0]);
        let (a, d) = dwt_step(x.view()).unwrap();
        let back = idwt_step(a.view(), d.view()).unwrap();
        close(&back, &[5.0, 1.0, 2.0, 8.0], 1e-12);

        let back = idwt_step(column(&[2f64.sqrt()]).view(), column(&[0.0]).view()).unwrap();
        close(&back, &[1.0, 1.0], 1e-15);

        let err = idwt_step(column(&[1.0]).view(), column(&[1.0, 2.0]).view());
        assert!(matches!(err, Err(WaveletError::ShapeMismatch { .. })));
    }

    #[test]
    fn random_round_trip_128x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_series(128, 3, &mut rng);
        let (a, d) = dwt_step(x.view()).unwrap();
        let back = idwt_step(a.view(), d.view()).unwrap();
        let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-12);
    }

    #[test]
    fn pyramid_shapes() {
        let x = Array2::<f64>::zeros((96, 2));
        let p = build_pyramid(x.view(), 0).unwrap();
        assert_eq!(p.scales_input.len(), 1);
        assert!(p.levels.is_empty());

        let p = build_pyramid(x.view(), 3).unwrap();
        assert_eq!(p.scale_lengths(), vec![96, 48, 24, 12]);
        assert_eq!(scale_lengths(96, 3), vec![96, 48, 24, 12]);
        assert_eq!(scale_lengths(5, 3), vec![5, 3, 2, 1]);
    }

    #[test]
    fn pyramid_energy_ledger_chains() {
        // Energy of the input chain equals the coarsest approximation plus all
        // details, once each odd parent is counted with its padded sample.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [7usize, 31, 64, 100] {
            let x = random_series(len, 2, &mut rng);
            let p = build_pyramid(x.view(), 3).unwrap();
            let mut padding_energy = 0.0;
            for j in 0..3 {
                let parent = &p.scales_input[j];
                if parent.nrows() % 2 == 1 {
                    padding_energy += parent.row(parent.nrows() - 1).iter().map(|v| v * v).sum::<f64>();
                }
            }
            let details: f64 = p.levels.iter().map(|l| energy(l.detail.view())).sum();
            let total = energy(p.scales_input[3].view()) + details;
            let input = energy(x.view()) + padding_energy;
            assert!((total - input).abs() <= 1e-10 * input);
            for lvl in p.energy_ledger() {
                assert!(lvl.relative_gap() <= 1e-10);
            }
        }
    }

    #[test]
    fn avg_pool_examples() {
        close(&avg_pool_step(column(&[1.0, 3.0]).view()).unwrap(), &[2.0], 0.0);
        let alt = column(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let pooled = avg_pool_step(alt.view()).unwrap();
        close(&pooled, &[0.0; 4], 0.0);
        let (_, d) = dwt_step(alt.view()).unwrap();
        close(&d, &[2f64.sqrt(); 4], 1e-15);
        assert!((energy(d.view()) - 8.0).abs() < 1e-12);

        let c = Array2::from_elem((10, 2), 3.5);
        let pooled = avg_pool_pyramid(c.view(), 2).unwrap();
        assert_eq!(pooled[1], Array2::from_elem((5, 2), 3.5));
        assert_eq!(pooled[2], Array2::from_elem((3, 2), 3.5));
    }

    #[test]
    fn zero_detail_iff_pairwise_constant() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [4.0, -1.0], [4.0, -1.0]];
        let (_, d) = dwt_step(x.view()).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        let y = array![[1.0], [1.0], [4.0], [4.5]];
        let (_, d) = dwt_step(y.view()).unwrap();
        assert!(d.iter().any(|&v| v != 0.0));
    }

    proptest! {
        #[test]
        fn perfect_reconstruction_and_parseval(len in 1usize..200, channels in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_series(len, channels, &mut rng);
            let (a, d) = dwt_step(x.view()).unwrap();
            prop_assert_eq!(a.nrows(), len.div_ceil(2));
            let padded = pad_tail_even(x.view());
            let back = idwt_step(a.view(), d.view()).unwrap();
            let err = (&back - &padded).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= 1e-12);
            let e = energy(padded.view());
            prop_assert!((e - energy(a.view()) - energy(d.view())).abs() <= 1e-10 * e);
        }

        #[test]
        fn detail_vanishes_only_for_pairwise_constant(pairs in proptest::collection::vec((-5i32..5, -5i32..5), 1..20)) {
            let values: Vec<f64> = pairs.iter().flat_map(|&(a, b)| [a as f64, b as f64]).collect();
            let (_, d) = dwt_step(column(&values).view()).unwrap();
            let pairwise_constant = pairs.iter().all(|(a, b)| a == b);
            prop_assert_eq!(d.iter().all(|&v| v == 0.0), pairwise_constant);
        }
    }
}
