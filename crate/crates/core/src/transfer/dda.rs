use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::mmd::{median_bandwidth, mmd_with_grad, MmdConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{backward, forward_trace, mse_with_grad, train_xy, Activation, LayerGrad, MlpModel, OptimizerState, TrainConfig};
use crate::rng;
use crate::thermal::Dataset;

/// Weights of the four terms of the adaptation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdaWeights {
    /// Supervised task MSE on the target domain.
    pub alpha: f64,
    /// Squared MMD between encoded source and target batches.
    pub beta: f64,
    /// Reconstruction MSE through the frozen decoder, both domains.
    pub gamma: f64,
    /// L2 penalty on trainable weights.
    pub delta: f64,
}

impl Default for DdaWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 0.5, delta: 1e-4 }
    }
}

impl DdaWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config(format!("dda loss weights must be >= 0, got {all:?}")));
        }
        if self.alpha == 0.0 && self.gamma == 0.0 {
            return Err(Error::config("dda needs alpha > 0 or gamma > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdaConfig {
    pub weights: DdaWeights,
    /// Encoder widths after the input; the last one is the latent size.
    pub encoder: Vec<usize>,
    /// Decoder hidden widths between the latent and the reconstruction.
    pub decoder_hidden: Vec<usize>,
    /// Regression-head hidden widths between the latent and the output.
    pub head_hidden: Vec<usize>,
    pub bandwidth: MmdConfig,
    /// Stage 1: autoencoder pre-training on source inputs.
    pub autoencoder: TrainConfig,
    /// Stage 2: encoder + head under the composite loss.
    pub train: TrainConfig,
}

impl Default for DdaConfig {
    fn default() -> Self {
        Self {
            weights: DdaWeights::default(),
            encoder: vec![16, 8],
            decoder_hidden: vec![16],
            head_hidden: vec![],
            bandwidth: MmdConfig::MedianHeuristic,
            autoencoder: TrainConfig { epochs: 20, ..TrainConfig::default() },
            train: TrainConfig { epochs: 200, ..TrainConfig::default() },
        }
    }
}

impl DdaConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.encoder.is_empty() || self.encoder.contains(&0) {
            return Err(Error::config(format!("invalid encoder widths {:?}", self.encoder)));
        }
        if self.decoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::config("decoder and head widths must be non-zero"));
        }
        self.bandwidth.validate()?;
        self.autoencoder.validate()?;
        self.train.validate()
    }
}

/// One paired mini-batch.
#[derive(Debug, Clone)]
pub struct DdaBatch {
    pub source_x: Matrix,
    pub target_x: Matrix,
    pub target_y: Matrix,
}

/// Encoder + head network and the frozen decoder it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct DdaModel {
    /// Encoder layers followed by head layers.
    pub model: MlpModel,
    pub encoder_layers: usize,
    pub decoder: MlpModel,
    /// Mean composite loss per stage-2 epoch.
    pub loss_history: Vec<f64>,
}

impl DdaModel {
    pub fn encoder(&self) -> MlpModel {
        MlpModel::new(self.model.layers()[..self.encoder_layers].to_vec()).expect("prefix of a valid model")
    }
}

fn zero_grad(layer: &crate::model::Layer) -> LayerGrad {
    LayerGrad { weights: Matrix::zeros(layer.outputs(), layer.inputs()), bias: vec![0.0; layer.outputs()] }
}

fn accumulate(into: &mut [Option<LayerGrad>], from: &[Option<LayerGrad>]) {
    for (dst, src) in into.iter_mut().zip(from) {
        if let (Some(d), Some(s)) = (dst.as_mut(), src.as_ref()) {
            d.accumulate(s);
        }
    }
}

/// Composite loss and gradients for every trainable layer of `net`
/// (encoder layers followed by head layers). `sigma` is held constant.
pub fn dda_loss_and_grads(
    net: &MlpModel,
    encoder_layers: usize,
    decoder: &MlpModel,
    batch: &DdaBatch,
    weights: &DdaWeights,
    sigma: f64,
) -> Result<(f64, Vec<Option<LayerGrad>>)> {
    if encoder_layers == 0 || encoder_layers >= net.len() {
        return Err(Error::config(format!("encoder depth {encoder_layers} invalid for a {}-layer net", net.len())));
    }
    if batch.source_x.rows() == 0 || batch.target_x.rows() == 0 {
        return Err(Error::Empty("dda batch".into()));
    }
    let mut grads: Vec<Option<LayerGrad>> =
        net.layers().iter().map(|l| if l.frozen { None } else { Some(zero_grad(l)) }).collect();
    let encoder = MlpModel::new(net.layers()[..encoder_layers].to_vec())?;
    let mut loss = 0.0;

    if weights.alpha > 0.0 {
        let trace = forward_trace(net, &batch.target_x)?;
        let (task, g) = mse_with_grad(trace.output(), &batch.target_y, weights.alpha)?;
        loss += task;
        accumulate(&mut grads, &backward(net, &trace, &g, false)?.0);
    }

    if weights.gamma > 0.0 {
        let mut frozen_decoder = decoder.clone();
        frozen_decoder.set_frozen(true);
        let autoencoder = encoder.stacked(&frozen_decoder)?;
        let x = batch.source_x.vstack(&batch.target_x)?;
        let trace = forward_trace(&autoencoder, &x)?;
        let (recon, g) = mse_with_grad(trace.output(), &x, weights.gamma)?;
        loss += recon;
        let (g, _) = backward(&autoencoder, &trace, &g, false)?;
        accumulate(&mut grads[..encoder_layers], &g[..encoder_layers]);
    }

    if weights.beta > 0.0 {
        let trace_s = forward_trace(&encoder, &batch.source_x)?;
        let trace_t = forward_trace(&encoder, &batch.target_x)?;
        let (value, gs, gt) = mmd_with_grad(trace_s.output(), trace_t.output(), sigma)?;
        loss += weights.beta * value;
        for (trace, g) in [(&trace_s, gs), (&trace_t, gt)] {
            let (g, _) = backward(&encoder, trace, &g.scale(weights.beta), false)?;
            accumulate(&mut grads[..encoder_layers], &g);
        }
    }

    if weights.delta > 0.0 {
        for (layer, g) in net.layers().iter().zip(grads.iter_mut()) {
            if let Some(g) = g {
                for (gw, w) in g.weights.data_mut().iter_mut().zip(layer.weights.data()) {
                    loss += weights.delta * w * w;
                    *gw += 2.0 * weights.delta * w;
                }
            }
        }
    }
    Ok((loss, grads))
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Two-stage deep domain adaptation: an autoencoder pre-trained on source
/// inputs, then encoder + regression head trained under the composite loss
/// with the decoder frozen.
pub fn dda_train(source: &Dataset, target: &Dataset, cfg: &DdaConfig) -> Result<DdaModel> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("dda needs source and target samples".into()));
    }
    let input = source.features().cols();
    let latent = *cfg.encoder.last().expect("validated non-empty");
    let seed = cfg.train.seed;

    let encoder_sizes = widths(input, &cfg.encoder[..cfg.encoder.len() - 1], latent);
    let encoder = MlpModel::build(&encoder_sizes, Activation::Tanh, Activation::Tanh, rng::derive_seed(seed, 1))?;
    let decoder =
        MlpModel::build(&widths(latent, &cfg.decoder_hidden, input), Activation::Tanh, Activation::Linear, rng::derive_seed(seed, 2))?;
    let (autoencoder, _) = train_xy(&encoder.stacked(&decoder)?, source.features(), source.features(), &cfg.autoencoder)?;
    let (encoder, mut decoder) = autoencoder.split_at(encoder.len())?;
    decoder.set_frozen(true);

    let head = MlpModel::build(&widths(latent, &cfg.head_hidden, 1), Activation::Tanh, Activation::Linear, rng::derive_seed(seed, 3))?;
    let mut net = encoder.stacked(&head)?;
    let encoder_layers = encoder.len();

    let mut state = OptimizerState::new(cfg.train.optimizer, cfg.train.learning_rate, &net);
    let mut rng = rng::stream(seed, "dda-batches");
    let target_y = target.target_matrix();
    let mut order: Vec<usize> = (0..target.len()).collect();
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.train.batch_size) {
            let src: Vec<usize> = (0..chunk.len()).map(|_| rng.random_range(0..source.len())).collect();
            let batch = DdaBatch {
                source_x: source.features().select_rows(&src),
                target_x: target.features().select_rows(chunk),
                target_y: target_y.select_rows(chunk),
            };
            let sigma = if cfg.weights.beta > 0.0 {
                match cfg.bandwidth {
                    MmdConfig::Sigma(s) => s,
                    MmdConfig::MedianHeuristic => {
                        let enc = MlpModel::new(net.layers()[..encoder_layers].to_vec())?;
                        median_bandwidth(&enc.forward(&batch.source_x)?, &enc.forward(&batch.target_x)?)?
                    }
                }
            } else {
                1.0
            };
            let (loss, grads) = dda_loss_and_grads(&net, encoder_layers, &decoder, &batch, &cfg.weights, sigma)?;
            state.apply(&mut net, &grads)?;
            total += loss * chunk.len() as f64;
        }
        history.push(total / target.len() as f64);
    }
    if !net.is_finite() {
        return Err(Error::NonFinite("dda parameters (learning rate too high?)".into()));
    }
    Ok(DdaModel { model: net, encoder_layers, decoder, loss_history: history })
}
