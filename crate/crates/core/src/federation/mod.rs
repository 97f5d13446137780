//! Federated averaging over a subset of layers: payloads, aggregation,
//! partial merge, one client's local round, and the per-round log.

mod log;

pub use log::{RoundLog, RoundRecord};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{train_xy, Layer, MlpModel, TrainConfig};
use crate::rng;

/// One layer travelling over the wire, tagged with its position in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadLayer {
    pub index: usize,
    pub layer: Layer,
}

/// The FL-trainable slice of a model plus the sender's aggregation inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPayload {
    pub layers: Vec<PayloadLayer>,
    /// Local training-set size.
    pub n_k: u64,
    /// Relevance score in (0, 1].
    pub relevance: f64,
}

impl ModelPayload {
    /// Copies the layers selected by `mask`.
    pub fn from_model(model: &MlpModel, mask: &[bool], n_k: u64, relevance: f64) -> Result<Self> {
        check_mask(model, mask)?;
        let layers = mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(index, _)| PayloadLayer { index, layer: model.layer(index).clone() })
            .collect();
        Ok(Self { layers, n_k, relevance })
    }

    pub fn indices(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.index).collect()
    }

    /// Overwrites the weights and biases of the payload's layers in `model`.
    /// Frozen flags in `model` are left alone.
    pub fn install_into(&self, model: &mut MlpModel) -> Result<()> {
        for pl in &self.layers {
            let target = model
                .layers()
                .get(pl.index)
                .ok_or_else(|| Error::shape(format!("payload layer {} outside a {}-layer model", pl.index, model.len())))?;
            if target.weights.shape() != pl.layer.weights.shape() || target.activation != pl.layer.activation {
                return Err(Error::shape(format!(
                    "payload layer {} is {:?}/{:?}, model has {:?}/{:?}",
                    pl.index,
                    pl.layer.weights.shape(),
                    pl.layer.activation,
                    target.weights.shape(),
                    target.activation
                )));
            }
        }
        for pl in &self.layers {
            let target = &mut model.layers_mut()[pl.index];
            target.weights = pl.layer.weights.clone();
            target.bias = pl.layer.bias.clone();
        }
        Ok(())
    }

    fn same_shape(&self, other: &ModelPayload) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.index == b.index
                    && a.layer.weights.shape() == b.layer.weights.shape()
                    && a.layer.activation == b.layer.activation
            })
    }
}

/// What a client sends back after its local round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub client_id: String,
    pub round: u32,
    pub payload: ModelPayload,
    pub local_loss: f64,
}

impl ModelUpdate {
    pub fn n_k(&self) -> u64 {
        self.payload.n_k
    }

    pub fn relevance(&self) -> f64 {
        self.payload.relevance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    FedAvg,
    RelevanceWeighted,
}

fn default_retry_budget() -> u32 {
    3
}
fn default_client_timeout_ms() -> u64 {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: u32,
    pub local_epochs: usize,
    #[serde(default)]
    pub aggregation: AggregationMode,
    /// Which layers of the global model are averaged.
    #[serde(default)]
    pub trainable_mask: Vec<bool>,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_client_timeout_ms")]
    pub client_timeout_ms: u64,
    #[serde(default)]
    pub eval_each_round: bool,
    /// Optimizer settings for local training; `epochs` is replaced by
    /// `local_epochs` and `seed` is derived per round.
    #[serde(default)]
    pub train: TrainConfig,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be >= 1"));
        }
        if !self.trainable_mask.iter().any(|m| *m) {
            return Err(Error::config("trainable_mask must select at least one layer"));
        }
        if self.client_timeout_ms == 0 {
            return Err(Error::config("client_timeout_ms must be >= 1"));
        }
        self.train.validate()
    }

    /// Local training settings for one round.
    pub fn local_train(&self, round: u32) -> TrainConfig {
        TrainConfig {
            epochs: self.local_epochs,
            seed: rng::derive_seed(self.train.seed, u64::from(round)),
            ..self.train.clone()
        }
    }
}

fn check_mask(model: &MlpModel, mask: &[bool]) -> Result<()> {
    if mask.len() != model.len() {
        return Err(Error::shape(format!("mask has {} entries for a {}-layer model", mask.len(), model.len())));
    }
    Ok(())
}

/// Normalized aggregation weights, in update order. All but the last are
/// `raw_k / Σ raw`; the last is one minus the others so the weights sum to
/// exactly one.
pub fn aggregation_weights(updates: &[ModelUpdate], mode: AggregationMode) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::Aggregation("no updates to aggregate".into()));
    }
    for u in updates {
        if u.n_k() == 0 {
            return Err(Error::Aggregation(format!("client `{}` reported n_k = 0", u.client_id)));
        }
    }
    let raw: Vec<f64> = match mode {
        AggregationMode::FedAvg => updates.iter().map(|u| u.n_k() as f64).collect(),
        AggregationMode::RelevanceWeighted => {
            for u in updates {
                let r = u.relevance();
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::Aggregation(format!("client `{}` relevance {r} outside (0, 1]", u.client_id)));
                }
            }
            // Dividing by the largest score leaves equal scores at exactly 1.0,
            // so equal relevance reproduces plain FedAvg bit for bit.
            let top = updates.iter().map(|u| u.relevance()).fold(0.0, f64::max);
            updates.iter().map(|u| u.n_k() as f64 * (u.relevance() / top)).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let last = weights.len() - 1;
    let others: f64 = weights[..last].iter().sum();
    weights[last] = 1.0 - others;
    Ok(weights)
}

/// Parameter-wise weighted mean of the updates' payloads.
pub fn aggregate(updates: &[ModelUpdate], mode: AggregationMode) -> Result<ModelPayload> {
    let weights = aggregation_weights(updates, mode)?;
    let first = &updates[0].payload;
    for u in &updates[1..] {
        if !u.payload.same_shape(first) {
            return Err(Error::Aggregation(format!("payload from client `{}` does not match the others", u.client_id)));
        }
    }
    let mut layers = first.layers.clone();
    for (li, out) in layers.iter_mut().enumerate() {
        let blend = |pick: &dyn Fn(&PayloadLayer) -> &[f64], dst: &mut [f64]| {
            for (p, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (u, w) in updates.iter().zip(&weights) {
                    let v = pick(&u.payload.layers[li])[p];
                    acc += w * v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                // Rounding can push a mean a hair outside the client range.
                *d = acc.clamp(lo, hi);
            }
        };
        blend(&|l| l.layer.weights.data(), out.layer.weights.data_mut());
        blend(&|l| &l.layer.bias, &mut out.layer.bias);
    }
    let n_k = updates.iter().map(|u| u.n_k()).sum();
    Ok(ModelPayload { layers, n_k, relevance: 1.0 })
}

/// Replaces the masked layers of `global` by the payload; every other layer
/// is returned untouched.
pub fn partial_merge(global: &MlpModel, payload: &ModelPayload, mask: &[bool]) -> Result<MlpModel> {
    check_mask(global, mask)?;
    let wanted: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
    if wanted.is_empty() {
        return Err(Error::config("trainable_mask must select at least one layer"));
    }
    if payload.indices() != wanted {
        return Err(Error::Aggregation(format!(
            "payload covers layers {:?} but the mask selects {:?}",
            payload.indices(),
            wanted
        )));
    }
    let mut merged = global.clone();
    payload.install_into(&mut merged)?;
    Ok(merged)
}

/// One client's local round: install the global layers, train only those
/// layers on local data, and report them back.
///
/// `relevance` is the client's score against the shared reference sample;
/// it does not change between rounds so callers compute it once.
pub fn client_step(
    local_model: &MlpModel,
    x: &Matrix,
    y: &Matrix,
    cfg: &FedConfig,
    global: &ModelPayload,
    client_id: &str,
    round: u32,
    relevance: f64,
) -> Result<(MlpModel, ModelUpdate)> {
    if x.rows() == 0 {
        return Err(Error::Empty(format!("client `{client_id}` has no training data")));
    }
    let mut model = local_model.clone();
    global.install_into(&mut model)?;
    let indices = global.indices();
    let mask: Vec<bool> = (0..model.len()).map(|i| indices.contains(&i)).collect();
    model.set_trainable_mask(&mask)?;
    let (mut trained, history) = train_xy(&model, x, y, &cfg.local_train(round))?;
    let payload = ModelPayload::from_model(&trained, &mask, x.rows() as u64, relevance)?;
    // Restore the caller's freeze flags; only parameters changed.
    for (layer, original) in trained.layers_mut().iter_mut().zip(local_model.layers()) {
        layer.frozen = original.frozen;
    }
    let update = ModelUpdate {
        client_id: client_id.into(),
        round,
        payload,
        local_loss: history.last().copied().unwrap_or(f64::NAN),
    };
    Ok((trained, update))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::Dataset;
    use crate::model::{Activation, Optimizer};
    use alloc::vec;

    fn scalar_update(id: &str, n_k: u64, value: f64, relevance: f64) -> ModelUpdate {
        let layer = Layer::new(Matrix::new(1, 1, vec![value]).unwrap(), vec![value], Activation::Linear).unwrap();
        ModelUpdate {
            client_id: id.into(),
            round: 0,
            payload: ModelPayload { layers: vec![PayloadLayer { index: 0, layer }], n_k, relevance },
            local_loss: 0.0,
        }
    }

    fn value(p: &ModelPayload) -> f64 {
        p.layers[0].layer.weights.data()[0]
    }

    #[test]
    fn weighted_means_by_hand() {
        let equal = [scalar_update("a", 10, 1.0, 1.0), scalar_update("b", 10, 3.0, 1.0)];
        assert_eq!(value(&aggregate(&equal, AggregationMode::FedAvg).unwrap()), 2.0);
        let skewed = [scalar_update("a", 100, 1.0, 1.0), scalar_update("b", 300, 3.0, 1.0)];
        assert_eq!(value(&aggregate(&skewed, AggregationMode::FedAvg).unwrap()), 2.5);
        let single = [scalar_update("a", 7, 0.3, 1.0)];
        assert_eq!(aggregate(&single, AggregationMode::FedAvg).unwrap().layers, single[0].payload.layers);
    }

    #[test]
    fn relevance_shifts_weight_toward_relevant_clients() {
        let ups = [scalar_update("a", 100, 1.0, 1.0), scalar_update("b", 100, 3.0, 0.5)];
        let w = aggregation_weights(&ups, AggregationMode::RelevanceWeighted).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        let equal_r = [scalar_update("a", 30, 1.0, 0.4), scalar_update("b", 70, 3.0, 0.4)];
        assert_eq!(
            aggregate(&equal_r, AggregationMode::RelevanceWeighted).unwrap().layers,
            aggregate(&equal_r, AggregationMode::FedAvg).unwrap().layers
        );
    }

    #[test]
    fn aggregation_errors() {
        assert!(aggregate(&[], AggregationMode::FedAvg).is_err());
        let mut wide = scalar_update("wide", 5, 1.0, 1.0);
        wide.payload.layers[0].layer = Layer::zeros(2, 1, Activation::Linear);
        let err = aggregate(&[scalar_update("a", 5, 1.0, 1.0), wide], AggregationMode::FedAvg).unwrap_err();
        assert!(format!("{err}").contains("wide"));
        assert!(aggregate(&[scalar_update("zero", 0, 1.0, 1.0)], AggregationMode::FedAvg).is_err());
    }

    #[test]
    fn partial_merge_leaves_unmasked_layers() {
        let global = MlpModel::build(&[4, 6, 5, 1], Activation::Tanh, Activation::Linear, 1).unwrap();
        let other = MlpModel::build(&[4, 6, 5, 1], Activation::Tanh, Activation::Linear, 2).unwrap();
        let mask = [true, false, true];
        let payload = ModelPayload::from_model(&other, &mask, 1, 1.0).unwrap();
        let merged = partial_merge(&global, &payload, &mask).unwrap();
        assert_eq!(merged.layer(1), global.layer(1));
        assert_eq!(merged.layer(0).weights, other.layer(0).weights);
        assert!(partial_merge(&global, &payload, &[true, true, true]).is_err());
        assert!(partial_merge(&global, &payload, &[false, false, false]).is_err());
        let full = ModelPayload::from_model(&other, &[true; 3], 1, 1.0).unwrap();
        let replaced = partial_merge(&global, &full, &[true; 3]).unwrap();
        for (a, b) in replaced.layers().iter().zip(other.layers()) {
            assert_eq!((&a.weights, &a.bias), (&b.weights, &b.bias));
        }
    }

    fn tiny_data() -> Dataset {
        let x = Matrix::from_fn(40, 4, |r, c| ((r * 7 + c * 3) % 11) as f64 / 11.0 - 0.5);
        let y = (0..40).map(|r| x[(r, 0)] - 0.5 * x[(r, 2)]).collect();
        Dataset::new(x, y, 60.0).unwrap()
    }

    fn fed_config(mask: Vec<bool>, optimizer: Optimizer, lr: f64) -> FedConfig {
        FedConfig {
            rounds: 1,
            local_epochs: 2,
            aggregation: AggregationMode::FedAvg,
            trainable_mask: mask,
            retry_budget: 3,
            client_timeout_ms: 1000,
            eval_each_round: false,
            train: TrainConfig { learning_rate: lr, optimizer, batch_size: 8, ..TrainConfig::default() },
        }
    }

    #[test]
    fn zero_lr_step_echoes_the_global_payload() {
        let local = MlpModel::build(&[4, 5, 3, 1], Activation::Tanh, Activation::Linear, 3).unwrap();
        let global = MlpModel::build(&[4, 5, 3, 1], Activation::Tanh, Activation::Linear, 4).unwrap();
        let mask = vec![true, true, false];
        let cfg = fed_config(mask.clone(), Optimizer::ADAM, 0.0);
        let payload = ModelPayload::from_model(&global, &mask, 1, 1.0).unwrap();
        let data = tiny_data();
        let (_, update) = client_step(&local, data.features(), &data.target_matrix(), &cfg, &payload, "c", 0, 0.8).unwrap();
        assert_eq!(update.payload.layers, payload.layers);
        assert_eq!(update.n_k(), 40);
        assert_eq!(update.relevance(), 0.8);
        assert_eq!(update.payload.indices(), vec![0, 1]);
    }

    #[test]
    fn client_step_only_moves_payload_layers() {
        let local = MlpModel::build(&[4, 5, 3, 1], Activation::Tanh, Activation::Linear, 3).unwrap();
        let mask = vec![true, false, false];
        let cfg = fed_config(mask.clone(), Optimizer::ADAM, 0.01);
        let payload = ModelPayload::from_model(&local, &mask, 1, 1.0).unwrap();
        let (trained, update) = client_step(&local, tiny_data().features(), &tiny_data().target_matrix(), &cfg, &payload, "c", 0, 1.0).unwrap();
        assert_ne!(trained.layer(0), local.layer(0));
        assert_eq!(trained.layer(1), local.layer(1));
        assert_eq!(trained.layer(2), local.layer(2));
        assert_eq!(trained.frozen_mask(), local.frozen_mask());
        assert_eq!(update.payload.layers[0].layer.weights, trained.layer(0).weights);
    }

    #[test]
    fn config_validation() {
        let mut cfg = fed_config(vec![false, false], Optimizer::ADAM, 0.01);
        assert!(cfg.validate().is_err());
        cfg.trainable_mask = vec![true, false];
        assert!(cfg.validate().is_ok());
        cfg.rounds = 0;
        assert!(cfg.validate().is_err());
    }
}
