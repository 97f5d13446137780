use serde::{Deserialize, Serialize};

use super::MlpModel;
use crate::error::{Error, Result};
use crate::thermal::Dataset;

/// Regression quality in physical target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean squared error, K².
    pub mse: f64,
    /// Coefficient of determination; `None` when the targets have zero variance.
    pub r2: Option<f64>,
}

pub fn evaluate_predictions(pred: &[f64], target: &[f64]) -> Result<Metrics> {
    if target.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::shape(alloc::format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(Metrics { mse: ss_res / n, r2 })
}

/// Evaluates `model` on `data`; predictions and targets are denormalized
/// with the dataset's stored statistics first.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let pred = model.forward(data.features())?;
    if pred.cols() != 1 {
        return Err(Error::shape("evaluate expects a single-output model"));
    }
    let pred = data.denormalize_targets(pred.data());
    let target = data.denormalize_targets(data.targets());
    evaluate_predictions(&pred, &target)
}
