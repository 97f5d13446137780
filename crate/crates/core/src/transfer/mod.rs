//! Domain adaptation: MMD and relevance scoring, fine-tuning, transfer
//! component analysis and deep domain adaptation, plus a single entry point
//! that adapts a source-trained base model to one target client.

mod dda;
mod mmd;
mod tca;

pub use dda::{dda_loss_and_grads, dda_train, DdaBatch, DdaConfig, DdaModel, DdaWeights};
pub use mmd::{gaussian_kernel, median_bandwidth, mmd, mmd_with_grad, relevance, MmdConfig, MEDIAN_SAMPLE_CAP, MIN_BANDWIDTH};
pub use tca::{shifted_gaussian_pair, tca_fit, tca_fit_subsampled, tca_system, tca_transform, TcaConfig, TcaMap};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{evaluate_predictions, extend_for_finetune, train, train_xy, Activation, HeadSpec, Metrics, MlpModel, TrainConfig};
use crate::rng;
use crate::thermal::{subsample_indices, Dataset};

/// Freezes the base model, swaps its output layer for a fresh head, and
/// trains only the head on target data.
pub fn fine_tune(base: &MlpModel, target: &Dataset, head: &HeadSpec, cfg: &TrainConfig) -> Result<MlpModel> {
    let extended = extend_for_finetune(base, head, cfg.seed)?;
    Ok(train(&extended, target, cfg)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlMethod {
    #[default]
    FineTune,
    Tca,
    Dda,
    /// No adaptation: the base model is used as is.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub head: HeadSpec,
    pub fine_tune: TrainConfig,
    pub tca: TcaConfig,
    /// Hidden widths of the regressor trained on transfer components.
    pub tca_hidden: Vec<usize>,
    pub tca_train: TrainConfig,
    /// Source rows (seeded subsample) mixed into the regressor's training set.
    pub tca_source_rows: usize,
    pub dda: DdaConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            head: HeadSpec::default(),
            fine_tune: TrainConfig { epochs: 40, ..TrainConfig::default() },
            tca: TcaConfig::default(),
            tca_hidden: vec![32, 32],
            tca_train: TrainConfig { epochs: 40, ..TrainConfig::default() },
            tca_source_rows: 2000,
            dda: DdaConfig::default(),
        }
    }
}

/// A client model after the transfer-learning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapted {
    pub method: TlMethod,
    pub model: MlpModel,
    /// Input transformation applied before `model` (TCA only).
    pub tca: Option<TcaMap>,
    /// Layers of `model` that take part in federated averaging.
    pub fl_mask: Vec<bool>,
}

impl Adapted {
    /// Model inputs for raw normalized features.
    pub fn inputs(&self, features: &Matrix) -> Result<Matrix> {
        match &self.tca {
            Some(map) => tca_transform(map, features),
            None => Ok(features.clone()),
        }
    }

    /// Predictions in normalized target units.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<f64>> {
        Ok(self.model.forward(&self.inputs(features)?)?.into_data())
    }

    /// Metrics in kelvin.
    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        let pred = data.denormalize_targets(&self.predict(data.features())?);
        evaluate_predictions(&pred, &data.denormalize_targets(data.targets()))
    }

    pub fn with_model(&self, model: MlpModel) -> Adapted {
        Adapted { model, ..self.clone() }
    }
}

/// Adapts `base` (trained on `source_train`) to one client's `target_train`.
pub fn adapt(
    method: TlMethod,
    base: &MlpModel,
    source_train: &Dataset,
    target_train: &Dataset,
    cfg: &TransferConfig,
    seed: u64,
) -> Result<Adapted> {
    if target_train.is_empty() {
        return Err(Error::Empty("target training set".into()));
    }
    match method {
        TlMethod::None => {
            let mut model = base.clone();
            model.set_frozen(false);
            Ok(Adapted { method, fl_mask: vec![true; model.len()], model, tca: None })
        }
        TlMethod::FineTune => {
            let train_cfg = TrainConfig { seed: rng::derive_seed(seed, rng::tag("fine-tune")), ..cfg.fine_tune.clone() };
            let model = fine_tune(base, target_train, &cfg.head, &train_cfg)?;
            // Base layers kept by the head swap are averaged; the head stays local.
            let kept = base.len() - 1;
            let fl_mask = (0..model.len()).map(|i| i < kept).collect();
            Ok(Adapted { method, model, tca: None, fl_mask })
        }
        TlMethod::Tca => {
            let map = tca_fit_subsampled(source_train.features(), target_train.features(), &cfg.tca, seed)?;
            let src_idx = subsample_indices(source_train.len(), cfg.tca_source_rows, rng::derive_seed(seed, 3));
            let src = source_train.select(&src_idx);
            let x = tca_transform(&map, src.features())?.vstack(&tca_transform(&map, target_train.features())?)?;
            let y = src.target_matrix().vstack(&target_train.target_matrix())?;
            let mut sizes = vec![map.m];
            sizes.extend_from_slice(&cfg.tca_hidden);
            sizes.push(1);
            let init = MlpModel::build(&sizes, Activation::Tanh, Activation::Linear, rng::derive_seed(seed, 4))?;
            let train_cfg = TrainConfig { seed: rng::derive_seed(seed, rng::tag("tca-train")), ..cfg.tca_train.clone() };
            let (model, _) = train_xy(&init, &x, &y, &train_cfg)?;
            Ok(Adapted { method, fl_mask: vec![true; model.len()], model, tca: Some(map) })
        }
        TlMethod::Dda => {
            let mut dda_cfg = cfg.dda.clone();
            dda_cfg.train.seed = rng::derive_seed(seed, rng::tag("dda"));
            dda_cfg.autoencoder.seed = rng::derive_seed(seed, rng::tag("dda-ae"));
            let out = dda_train(source_train, target_train, &dda_cfg)?;
            let model = out.model;
            Ok(Adapted { method, fl_mask: vec![true; model.len()], model, tca: None })
        }
    }
}
