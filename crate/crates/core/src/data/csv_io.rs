use super::{DataError, RawSeries};
use ndarray::Array2;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// `Some(true)` treats the first column as timestamps, `Some(false)` as a
    /// channel. `None` detects it: a header named like a date/time column, or
    /// a first data cell that does not parse as a number.
    pub timestamp_column: Option<bool>,
}

fn looks_like_time_header(name: &str) -> bool {
    matches!(name.trim().to_ascii_lowercase().as_str(), "date" | "time" | "timestamp" | "datetime")
}

/// Reads a headed CSV with an optional leading timestamp column; every other
/// column becomes a channel, in file order.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<RawSeries, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let csv_err = |e: csv::Error| DataError::Csv { path: path.to_path_buf(), message: e.to_string() };
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(csv_err)?;
    if records.is_empty() {
        return Err(DataError::NoRows { path: path.to_path_buf() });
    }

    let has_time = options.timestamp_column.unwrap_or_else(|| {
        header.first().is_some_and(|h| looks_like_time_header(h))
            || records[0].get(0).is_some_and(|cell| cell.trim().parse::<f64>().is_err())
    });
    let first = usize::from(has_time);
    let width = header.len();
    let channels = width.saturating_sub(first);
    if channels == 0 {
        return Err(DataError::Csv { path: path.to_path_buf(), message: "no numeric columns".into() });
    }

    let mut values = Array2::zeros((records.len(), channels));
    let mut timestamps = has_time.then(|| Vec::with_capacity(records.len()));
    for (r, rec) in records.iter().enumerate() {
        // 1-based data row numbers, header excluded.
        let row = r + 1;
        if rec.len() != width {
            return Err(DataError::Ragged { path: path.to_path_buf(), row, expected: width, got: rec.len() });
        }
        if let Some(ts) = timestamps.as_mut() {
            ts.push(rec[0].to_string());
        }
        for c in 0..channels {
            let column = first + c;
            let cell = rec[column].trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
                return Err(DataError::Missing { path: path.to_path_buf(), row, column: column + 1 });
            }
            let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                path: path.to_path_buf(),
                row,
                column: column + 1,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::Missing { path: path.to_path_buf(), row, column: column + 1 });
            }
            values[[r, c]] = v;
        }
    }
    Ok(RawSeries { timestamps, values, channel_names: header[first..].to_vec() })
}

/// Writes a series in the layout [`load_csv`] reads. Values use the
/// shortest decimal form that parses back to the same `f64`.
pub fn write_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| DataError::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header: Vec<String> = Vec::new();
    if series.timestamps.is_some() {
        header.push("date".into());
    }
    header.extend(series.channel_names.iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for (r, row) in series.values.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ts) = &series.timestamps {
            rec.push(ts[r].clone());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub window_id: usize,
    pub horizon_step: usize,
    pub channel: String,
    pub y_true: f64,
    pub y_pred: f64,
}

pub fn write_predictions(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<(), DataError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| DataError::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["window_id", "horizon_step", "channel", "y_true", "y_pred"]).map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.window_id.to_string(),
            r.horizon_step.to_string(),
            r.channel.clone(),
            r.y_true.to_string(),
            r.y_pred.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}
