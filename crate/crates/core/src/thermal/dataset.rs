use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

pub const FEATURE_NAMES: [&str; 4] = ["current_a", "ambient_c", "frequency_hz", "power_kw"];
pub const TARGET_NAME: &str = "temp_rel_k";

/// Per-column z-score statistics, features then target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: [f64; 4],
    pub feature_std: [f64; 4],
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormStats {
    fn validate(&self) -> Result<()> {
        for (i, s) in self.feature_std.iter().enumerate() {
            if !(*s > 0.0) {
                return Err(Error::ZeroVariance(FEATURE_NAMES[i].to_string()));
            }
        }
        if !(self.target_std > 0.0) {
            return Err(Error::ZeroVariance(TARGET_NAME.to_string()));
        }
        Ok(())
    }
}

/// Feature matrix `N × 4` (current A, ambient °C, frequency Hz, power kW)
/// and relative-temperature targets in K.
///
/// When `norm_stats` is set, both features and targets are stored in
/// normalized units and the statistics describe how to undo it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    targets: Vec<f64>,
    sample_interval: f64,
    norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Vec<f64>, sample_interval: f64) -> Result<Self> {
        if features.cols() != 4 {
            return Err(Error::shape(format!("expected 4 feature columns, got {}", features.cols())));
        }
        if features.rows() != targets.len() {
            return Err(Error::shape(format!("{} feature rows but {} targets", features.rows(), targets.len())));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("features".into()));
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("target row {i}")));
        }
        if !(sample_interval > 0.0) {
            return Err(Error::config("sample_interval must be > 0"));
        }
        Ok(Self { features, targets, sample_interval, norm_stats: None })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_matrix(&self) -> Matrix {
        Matrix::column(&self.targets)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm_stats.is_some()
    }

    /// Rows in the given order; keeps the normalization state.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            sample_interval: self.sample_interval,
            norm_stats: self.norm_stats,
        }
    }

    /// Seeded random `(train, test)` split.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let (tr, te) = split_indices(self.len(), train_fraction, seed)?;
        Ok((self.select(&tr), self.select(&te)))
    }

    /// Uniform seeded subsample of at most `max` rows (all rows, in order,
    /// when the dataset is already small enough).
    pub fn subsample(&self, max: usize, seed: u64) -> Dataset {
        self.select(&subsample_indices(self.len(), max, seed))
    }

    /// Concatenates datasets that share the same normalization.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Empty("nothing to concatenate".into()))?;
        let mut features = first.features.clone();
        let mut targets = first.targets.clone();
        for p in &parts[1..] {
            if p.norm_stats != first.norm_stats {
                return Err(Error::config("cannot concatenate datasets with different normalization"));
            }
            features = features.vstack(&p.features)?;
            targets.extend_from_slice(&p.targets);
        }
        Ok(Dataset { features, targets, sample_interval: first.sample_interval, norm_stats: first.norm_stats })
    }

    /// Targets in kelvin regardless of the normalization state.
    pub fn denormalize_targets(&self, values: &[f64]) -> Vec<f64> {
        match &self.norm_stats {
            Some(s) => values.iter().map(|v| v * s.target_std + s.target_mean).collect(),
            None => values.to_vec(),
        }
    }

    /// Undoes `normalize_apply`.
    pub fn denormalize(&self) -> Result<Dataset> {
        let s = self.norm_stats.ok_or_else(|| Error::config("dataset is not normalized"))?;
        let mut features = self.features.clone();
        for r in 0..features.rows() {
            for (c, v) in features.row_mut(r).iter_mut().enumerate() {
                *v = *v * s.feature_std[c] + s.feature_mean[c];
            }
        }
        Ok(Dataset {
            features,
            targets: self.denormalize_targets(&self.targets),
            sample_interval: self.sample_interval,
            norm_stats: None,
        })
    }

    pub(crate) fn with_targets(&self, targets: Vec<f64>) -> Dataset {
        Dataset { targets, ..self.clone() }
    }

    pub(crate) fn with_features(&self, features: Matrix) -> Dataset {
        Dataset { features, ..self.clone() }
    }
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "split"));
    let n_train = libm::round(n as f64 * train_fraction) as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub(crate) fn subsample_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "subsample"));
    idx.truncate(max);
    idx.sort_unstable();
    idx
}

/// Fits per-column z-score statistics on an unnormalized dataset.
pub fn normalize_fit(data: &Dataset) -> Result<NormStats> {
    if data.is_normalized() {
        return Err(Error::config("dataset is already normalized"));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::Empty(format!("normalization needs at least 2 rows, got {n}")));
    }
    let moments = |values: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = values.collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        (mean, libm::sqrt(var))
    };
    let mut stats =
        NormStats { feature_mean: [0.0; 4], feature_std: [0.0; 4], target_mean: 0.0, target_std: 0.0 };
    for c in 0..4 {
        let (m, s) = moments(&mut (0..n).map(|r| data.features[(r, c)]));
        stats.feature_mean[c] = m;
        stats.feature_std[c] = s;
    }
    let (m, s) = moments(&mut data.targets.iter().copied());
    stats.target_mean = m;
    stats.target_std = s;
    stats.validate()?;
    Ok(stats)
}

/// Z-scores `data` with externally supplied statistics (normally the
/// source domain's, so every client shares one coordinate frame).
pub fn normalize_apply(data: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if data.is_normalized() {
        return Err(Error::config("dataset is already normalized"));
    }
    stats.validate()?;
    let mut features = data.features.clone();
    for r in 0..features.rows() {
        for (c, v) in features.row_mut(r).iter_mut().enumerate() {
            *v = (*v - stats.feature_mean[c]) / stats.feature_std[c];
        }
    }
    let targets = data.targets.iter().map(|t| (t - stats.target_mean) / stats.target_std).collect();
    Ok(Dataset { features, targets, sample_interval: data.sample_interval, norm_stats: Some(*stats) })
}
