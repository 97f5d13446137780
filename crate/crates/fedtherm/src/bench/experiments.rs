use fedtherm_core::model::{evaluate_predictions, train_xy, Metrics, TrainConfig};
use fedtherm_core::transfer::Adapted;
use fedtherm_core::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingOutcome {
    pub mse_before: f64,
    pub mse_after: f64,
    /// `100 · (before − after) / before`.
    pub improvement_pct: f64,
}

/// Layers retrained by the refit: whatever the federation left local, or the
/// output layer when every layer was federated.
pub fn head_mask(adapted: &Adapted) -> Vec<bool> {
    let mask: Vec<bool> = adapted.fl_mask.iter().map(|m| !m).collect();
    if mask.iter().any(|m| *m) {
        mask
    } else {
        (0..mask.len()).map(|i| i + 1 == mask.len()).collect()
    }
}

/// Re-fine-tunes the head of a federated client model on the client's
/// retained TL training data and reports the change on its held-out split.
/// Zero refit epochs leaves the model untouched.
pub fn forgetting_experiment(
    after_fl: &Adapted,
    retained_train: Option<&Dataset>,
    held_out: &Dataset,
    refit: &TrainConfig,
) -> Result<(ForgettingOutcome, Adapted)> {
    let retained = retained_train.ok_or_else(|| Error::config("forgetting", "the client's initial training data was not retained"))?;
    let before = after_fl.evaluate(held_out)?.mse;
    let refitted = if refit.epochs == 0 {
        after_fl.clone()
    } else {
        let mut model = after_fl.model.clone();
        model.set_trainable_mask(&head_mask(after_fl))?;
        let x = after_fl.inputs(retained.features())?;
        let (mut trained, _) = train_xy(&model, &x, &retained.target_matrix(), refit)?;
        for (layer, original) in trained.layers_mut().iter_mut().zip(after_fl.model.layers()) {
            layer.frozen = original.frozen;
        }
        after_fl.with_model(trained)
    };
    let after = refitted.evaluate(held_out)?.mse;
    let improvement_pct = if before > 0.0 { 100.0 * (before - after) / before } else { 0.0 };
    Ok((ForgettingOutcome { mse_before: before, mse_after: after, improvement_pct }, refitted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadShiftOutcome {
    pub client: String,
    pub factor: f64,
    pub window: (usize, usize),
    /// Held-out rows inside the shifted window.
    pub window_test: Metrics,
    /// Largest absolute error over the first rows of the window, K.
    pub boundary_error: f64,
    /// Median absolute error over the whole series, K.
    pub median_error: f64,
}

impl LoadShiftOutcome {
    pub fn spike_ratio(&self) -> f64 {
        self.boundary_error / self.median_error
    }
}

/// Rows after the window start that count as "at the boundary".
pub const BOUNDARY_ROWS: usize = 3;

/// Scores a model on a load-shifted series. `measured` and `predicted` are
/// in kelvin over the full series; `test_rows` are the held-out indices.
pub fn load_shift_outcome(
    client: &str,
    factor: f64,
    window: (usize, usize),
    measured: &[f64],
    predicted: &[f64],
    test_rows: &[usize],
) -> Result<LoadShiftOutcome> {
    let in_window: Vec<usize> = test_rows.iter().copied().filter(|&r| r >= window.0 && r < window.1).collect();
    let pick = |v: &[f64]| in_window.iter().map(|&r| v[r]).collect::<Vec<_>>();
    let window_test = evaluate_predictions(&pick(predicted), &pick(measured))?;
    let abs_err: Vec<f64> = measured.iter().zip(predicted).map(|(m, p)| (p - m).abs()).collect();
    let end = (window.0 + BOUNDARY_ROWS).min(abs_err.len());
    let boundary_error = abs_err[window.0..end].iter().copied().fold(0.0, f64::max);
    Ok(LoadShiftOutcome {
        client: client.into(),
        factor,
        window,
        window_test,
        boundary_error,
        median_error: median(&abs_err),
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Equal-width histogram of `values` with `bins` bins spanning their range.
/// Every value lands in exactly one bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c)).collect()
}
