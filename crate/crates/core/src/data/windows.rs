use super::{DataError, RawSeries};
use crate::normalization::DatasetScaler;
use ndarray::{s, Array2, Array3, ArrayView2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = String;

    /// Parses `"0.7,0.1,0.2"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad split ratio {p:?}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            &[train, val, test] => Ok(Self { train, val, test }),
            _ => Err(format!("expected three split ratios, got {}", parts.len())),
        }
    }
}

impl std::fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(format!("split ratios must be positive, got {self}"));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("split ratios must sum to 1, got {self}"));
        }
        Ok(())
    }

    /// Row boundaries `(train_end, val_end)`: the test split takes
    /// `⌊len·test⌋` rows, validation the remainder.
    pub fn boundaries(&self, len: usize) -> (usize, usize) {
        let floor = |r: f64| ((len as f64) * r + 1e-9).floor() as usize;
        let train_end = floor(self.train);
        let test_rows = floor(self.test);
        (train_end, len - test_rows)
    }
}

/// Chronological row ranges of the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
    pub len: usize,
}

impl SplitBounds {
    /// Rows owned by a split; the three ranges partition `0..len`.
    pub fn rows(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..self.len,
        }
    }
}

/// One gathered mini-batch: inputs `[B, L, C]`, targets `[B, T, C]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array3<f64>,
    pub targets: Array3<f64>,
    pub starts: Vec<usize>,
}

/// Scaled series plus the admissible window start rows of each split.
///
/// A window starting at row `i` reads inputs `i..i+L` and targets
/// `i+L..i+L+T`. Validation and test look-backs may begin up to `L` rows
/// inside the preceding split, but targets never leave their own split.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    values: Array2<f64>,
    scaler: DatasetScaler,
    bounds: SplitBounds,
    lookback: usize,
    horizon: usize,
    windows: [Vec<usize>; 3],
}

impl WindowDataset {
    /// Builds windows over already-scaled values.
    pub fn new(
        values: Array2<f64>,
        scaler: DatasetScaler,
        bounds: SplitBounds,
        lookback: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<Self, DataError> {
        if lookback == 0 || horizon == 0 || stride == 0 {
            return Err(DataError::Config("lookback, horizon and stride must be positive".into()));
        }
        if bounds.len != values.nrows() || bounds.train_end > bounds.val_end || bounds.val_end > bounds.len {
            return Err(DataError::Config(format!("invalid split bounds {bounds:?} for {} rows", values.nrows())));
        }
        let mut windows: [Vec<usize>; 3] = Default::default();
        for split in Split::ALL {
            let rows = bounds.rows(split);
            let first = rows.start.checked_sub(if split == Split::Train { 0 } else { lookback });
            let Some(first) = first else {
                return Err(DataError::Config(format!(
                    "{} split starts at row {} but the look-back needs {lookback} earlier rows",
                    split.name(),
                    rows.start
                )));
            };
            let span = lookback + horizon;
            if rows.end < first + span {
                return Err(DataError::Config(format!(
                    "{} split (rows {}..{}) is too short for one window of lookback {lookback} + horizon {horizon}",
                    split.name(),
                    rows.start,
                    rows.end
                )));
            }
            windows[split.index()] = (first..=rows.end - span).step_by(stride).collect();
        }
        Ok(Self { values, scaler, bounds, lookback, horizon, windows })
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn bounds(&self) -> SplitBounds {
        self.bounds
    }

    pub fn scaler(&self) -> &DatasetScaler {
        &self.scaler
    }

    /// The scaled series.
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn windows(&self, split: Split) -> &[usize] {
        &self.windows[split.index()]
    }

    pub fn input(&self, start: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![start..start + self.lookback, ..])
    }

    pub fn target(&self, start: usize) -> ArrayView2<'_, f64> {
        let t0 = start + self.lookback;
        self.values.slice(s![t0..t0 + self.horizon, ..])
    }

    /// Gathers the windows starting at `starts`.
    pub fn gather(&self, starts: &[usize]) -> Batch {
        let c = self.channels();
        let mut inputs = Array3::zeros((starts.len(), self.lookback, c));
        let mut targets = Array3::zeros((starts.len(), self.horizon, c));
        for (b, &i) in starts.iter().enumerate() {
            inputs.slice_mut(s![b, .., ..]).assign(&self.input(i));
            targets.slice_mut(s![b, .., ..]).assign(&self.target(i));
        }
        Batch { inputs, targets, starts: starts.to_vec() }
    }
}

/// Splits chronologically, fits the scaler on the training rows only and
/// enumerates stride-`stride` windows for every split.
pub fn make_splits(
    series: &RawSeries,
    ratios: SplitRatios,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowDataset, DataError> {
    ratios.validate().map_err(DataError::Config)?;
    let len = series.len();
    let (train_end, val_end) = ratios.boundaries(len);
    if train_end == 0 {
        return Err(DataError::Config("training split is empty".into()));
    }
    let bounds = SplitBounds { train_end, val_end, len };
    let scaler =
        DatasetScaler::fit(series.values.slice(s![..train_end, ..])).map_err(|e| DataError::Config(e.to_string()))?;
    let values = scaler.apply(series.values.view()).map_err(|e| DataError::Config(e.to_string()))?;
    WindowDataset::new(values, scaler, bounds, lookback, horizon, stride)
}
