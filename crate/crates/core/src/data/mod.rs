//! Series ingestion, chronological splitting and window construction.

mod csv_io;
mod synth;
mod windows;

pub use csv_io::{load_csv, write_csv, write_predictions, CsvOptions, PredictionRow};
pub use synth::{synth_sine_trend, with_high_frequency};
pub use windows::{make_splits, Batch, Split, SplitBounds, SplitRatios, WindowDataset};

use ndarray::Array2;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed csv: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}: no data rows")]
    NoRows { path: PathBuf },
    #[error("{path}: row {row} has {got} fields, expected {expected}")]
    Ragged { path: PathBuf, row: usize, expected: usize, got: usize },
    #[error("{path}: missing value at row {row}, column {column}")]
    Missing { path: PathBuf, row: usize, column: usize },
    #[error("{path}: non-numeric value {value:?} at row {row}, column {column}")]
    NonNumeric { path: PathBuf, row: usize, column: usize, value: String },
    #[error("{0}")]
    Config(String),
}

/// A multichannel series as read from disk: `values` is `length × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub timestamps: Option<Vec<String>>,
    pub values: Array2<f64>,
    pub channel_names: Vec<String>,
}

impl RawSeries {
    pub fn new(values: Array2<f64>) -> Self {
        let channel_names = (0..values.ncols()).map(|c| format!("ch{c}")).collect();
        Self { timestamps: None, values, channel_names }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}
