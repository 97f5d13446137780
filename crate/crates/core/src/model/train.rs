use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::backprop::{mse_gradients, LayerGrad};
use super::MlpModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::thermal::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::ADAM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub l2_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, epochs: 30, batch_size: 64, optimizer: Optimizer::ADAM, l2_weight: 0.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero learning rate is allowed: it turns training into a no-op,
        // which federated tests use to check payload plumbing.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.l2_weight >= 0.0) {
            return Err(Error::config("l2_weight must be >= 0"));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::config("Adam needs 0 <= beta < 1 and epsilon > 0"));
            }
        }
        Ok(())
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

/// Per-layer optimizer state for one model.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    learning_rate: f64,
    step: i32,
    moments: Vec<Option<Moments>>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, learning_rate: f64, model: &MlpModel) -> Self {
        let moments = model
            .layers()
            .iter()
            .map(|l| {
                (!l.frozen && matches!(optimizer, Optimizer::Adam { .. })).then(|| Moments {
                    m_w: alloc::vec![0.0; l.weights.data().len()],
                    v_w: alloc::vec![0.0; l.weights.data().len()],
                    m_b: alloc::vec![0.0; l.bias.len()],
                    v_b: alloc::vec![0.0; l.bias.len()],
                })
            })
            .collect();
        Self { optimizer, learning_rate, step: 0, moments }
    }

    /// Applies one update. Frozen layers and layers without a gradient are
    /// left untouched.
    pub fn apply(&mut self, model: &mut MlpModel, grads: &[Option<LayerGrad>]) -> Result<()> {
        if grads.len() != model.len() || self.moments.len() != model.len() {
            return Err(Error::shape("gradient set does not match the model"));
        }
        self.step += 1;
        let lr = self.learning_rate;
        for (i, (layer, g)) in model.layers_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if layer.frozen {
                continue;
            }
            match self.optimizer {
                Optimizer::Sgd => {
                    for (w, d) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
                        *w -= lr * d;
                    }
                    for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                        *b -= lr * d;
                    }
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let mom = self.moments[i].get_or_insert_with(|| Moments {
                        m_w: alloc::vec![0.0; g.weights.data().len()],
                        v_w: alloc::vec![0.0; g.weights.data().len()],
                        m_b: alloc::vec![0.0; g.bias.len()],
                        v_b: alloc::vec![0.0; g.bias.len()],
                    });
                    let c1 = 1.0 - libm::pow(beta1, f64::from(self.step));
                    let c2 = 1.0 - libm::pow(beta2, f64::from(self.step));
                    let adam = |p: &mut [f64], m: &mut [f64], v: &mut [f64], d: &[f64]| {
                        for (((p, m), v), d) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(d) {
                            *m = beta1 * *m + (1.0 - beta1) * d;
                            *v = beta2 * *v + (1.0 - beta2) * d * d;
                            let mh = *m / c1;
                            let vh = *v / c2;
                            *p -= lr * mh / (libm::sqrt(vh) + epsilon);
                        }
                    };
                    adam(layer.weights.data_mut(), &mut mom.m_w, &mut mom.v_w, g.weights.data());
                    adam(&mut layer.bias, &mut mom.m_b, &mut mom.v_b, &g.bias);
                }
            }
        }
        Ok(())
    }
}

/// Mini-batch MSE training on a normalized dataset. Returns the trained copy
/// and one mean training loss per epoch.
pub fn train(model: &MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    train_xy(model, data.features(), &data.target_matrix(), cfg)
}

/// Mini-batch MSE training on raw matrices (`y` may be multi-column, e.g. an
/// autoencoder's reconstruction target).
pub fn train_xy(model: &MlpModel, x: &Matrix, y: &Matrix, cfg: &TrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    cfg.validate()?;
    if !model.has_trainable() {
        return Err(Error::NothingTrainable);
    }
    if x.rows() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    if x.rows() != y.rows() || x.cols() != model.input_dim() || y.cols() != model.output_dim() {
        return Err(Error::shape(format!(
            "training data {}x{} -> {}x{} does not fit model {} -> {}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols(),
            model.input_dim(),
            model.output_dim()
        )));
    }
    let mut model = model.clone();
    let mut state = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &model);
    let mut rng = rng::stream(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(batch);
            let yb = y.select_rows(batch);
            let (loss, grads) = mse_gradients(&model, &xb, &yb, cfg.l2_weight)?;
            state.apply(&mut model, &grads)?;
            total += loss * batch.len() as f64;
        }
        history.push(total / x.rows() as f64);
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("trained parameters (learning rate too high?)".into()));
    }
    Ok((model, history))
}
