//! Dataset CSV files and small JSON helpers.
//!
//! Dataset files carry a `timestamp` column in seconds followed by the four
//! feature columns and the target. Columns are matched by header name, so
//! their order in the file is free.

use std::fs::File;
use std::path::Path;

use fedtherm_core::thermal::{FEATURE_NAMES, TARGET_NAME};
use fedtherm_core::{Dataset, Matrix};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const TIMESTAMP: &str = "timestamp";

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.into(), message: message.into() }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        Error::io(path, std::io::Error::other(e))
    } else {
        parse_error(path, e.to_string())
    }
}

/// Writes `data` in physical units (normalized datasets are denormalized).
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let raw = if data.is_normalized() { data.denormalize()? } else { data.clone() };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec![TIMESTAMP];
    header.extend(FEATURE_NAMES);
    header.push(TARGET_NAME);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in 0..raw.len() {
        let mut record = vec![(r as f64 * raw.sample_interval()).to_string()];
        record.extend(raw.features().row(r).iter().map(f64::to_string));
        record.push(raw.targets()[r].to_string());
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a raw dataset. The sample interval is taken from the first two
/// timestamps; a single-row file gets `default_interval`.
pub fn read_dataset(path: &Path, default_interval: f64) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| parse_error(path, format!("missing column `{name}`")))
    };
    let ts_col = find(TIMESTAMP)?;
    let feature_cols = FEATURE_NAMES.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let target_col = find(TARGET_NAME)?;

    let mut timestamps = Vec::new();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Line numbers count the header as line 1.
        let line = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |col: usize, name: &str| -> Result<f64> {
            let text = record.get(col).unwrap_or("");
            let v: f64 =
                text.parse().map_err(|_| parse_error(path, format!("row {line}: `{name}` is not a number: `{text}`")))?;
            if !v.is_finite() {
                return Err(parse_error(path, format!("row {line}: `{name}` is not finite")));
            }
            Ok(v)
        };
        timestamps.push(field(ts_col, TIMESTAMP)?);
        for (&c, name) in feature_cols.iter().zip(FEATURE_NAMES) {
            features.push(field(c, name)?);
        }
        targets.push(field(target_col, TARGET_NAME)?);
    }
    if targets.is_empty() {
        return Err(parse_error(path, "no data rows"));
    }
    let interval = match timestamps.as_slice() {
        [a, b, ..] => b - a,
        _ => default_interval,
    };
    if !(interval > 0.0) {
        return Err(parse_error(path, format!("timestamps must increase, got interval {interval}")));
    }
    let n = targets.len();
    let features = Matrix::new(n, FEATURE_NAMES.len(), features).map_err(fedtherm_core::Error::from)?;
    Ok(Dataset::new(features, targets, interval)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_error(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
