//! From-scratch multilayer perceptron.
//!
//! A model is an ordered list of dense layers. Each layer carries its own
//! `frozen` flag; training never touches frozen parameters, which is what the
//! fine-tuning head, the frozen DDA decoder and partial federated averaging
//! all rely on.

mod backprop;
mod finetune;
mod metrics;
mod train;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

pub use backprop::{backward, forward_trace, gradients, mse_gradients, mse_with_grad, LayerGrad, Trace};
pub use finetune::{extend_for_finetune, HeadSpec};
pub use metrics::{evaluate, evaluate_predictions, Metrics};
pub use train::{train, train_xy, Optimizer, OptimizerState, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer `act(W·x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub frozen: bool,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self { weights, bias, activation, frozen: false })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { weights: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs], activation, frozen: false }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(inputs: usize, outputs: usize, activation: Activation, rng: &mut rng::Rng) -> Self {
        let limit = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let weights = Matrix::from_fn(outputs, inputs, |_, _| rng.random_range(-limit..limit));
        Self { weights, bias: vec![0.0; outputs], activation, frozen: false }
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    /// Batch forward pass: `x` is `N × in`, result `N × out`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_transposed(&self.weights)?;
        let out = self.outputs();
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + b);
            }
        }
        debug_assert_eq!(z.cols(), out);
        Ok(z)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Validates that adjacent layer dimensions chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a model needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    i,
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::shape(format!("layer {i}: bias/weight mismatch")));
            }
        }
        Ok(Self { layers })
    }

    /// Fully connected network with the given unit counts, e.g.
    /// `[4, 32, 32, 1]`. Hidden layers use `hidden`, the last `output`.
    pub fn build(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = rng::stream(seed, "init");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == sizes.len() { output } else { hidden };
                Layer::xavier(w[0], w[1], act, &mut rng)
            })
            .collect();
        Self::new(layers)
    }

    /// The default thermal regressor: 4 → 32 → 32 → 1 with Tanh hidden units.
    pub fn thermal_default(seed: u64) -> Self {
        Self::build(&[4, 32, 32, 1], Activation::Tanh, Activation::Linear, seed)
            .expect("static architecture is valid")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn has_trainable(&self) -> bool {
        self.layers.iter().any(|l| !l.frozen)
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for l in &mut self.layers {
            l.frozen = frozen;
        }
    }

    /// Freezes every layer whose mask entry is `false` and unfreezes the rest.
    pub fn set_trainable_mask(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.layers.len() {
            return Err(Error::shape(format!("mask has {} entries for {} layers", mask.len(), self.layers.len())));
        }
        for (l, &m) in self.layers.iter_mut().zip(mask) {
            l.frozen = !m;
        }
        Ok(())
    }

    pub fn frozen_mask(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.frozen).collect()
    }

    /// Concatenates two networks (`self` feeds `next`).
    pub fn stacked(&self, next: &MlpModel) -> Result<MlpModel> {
        let mut layers = self.layers.clone();
        layers.extend(next.layers.iter().cloned());
        MlpModel::new(layers)
    }

    /// Splits off the first `n` layers.
    pub fn split_at(&self, n: usize) -> Result<(MlpModel, MlpModel)> {
        if n == 0 || n >= self.layers.len() {
            return Err(Error::config(format!("cannot split {} layers at {n}", self.layers.len())));
        }
        Ok((MlpModel::new(self.layers[..n].to_vec())?, MlpModel::new(self.layers[n..].to_vec())?))
    }

    /// Batch prediction: `N × input_dim` in, `N × output_dim` out.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "model expects {} input columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut h = self.layers[0].forward(x)?;
        for l in &self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }
}

/// Dataset-level forward pass.
pub fn forward(model: &MlpModel, x: &Matrix) -> Result<Matrix> {
    model.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let m = MlpModel::new(vec![Layer::zeros(4, 3, Activation::Linear), Layer::zeros(3, 1, Activation::Linear)])
            .unwrap();
        let x = Matrix::from_fn(5, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(m.forward(&x).unwrap(), Matrix::zeros(5, 1));
    }

    #[test]
    fn selector_layer_returns_first_column() {
        let w = Matrix::new(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let m = MlpModel::new(vec![Layer::new(w, vec![0.0], Activation::Linear).unwrap()]).unwrap();
        let x = Matrix::from_fn(6, 4, |r, c| (r as f64) * 1.5 - c as f64);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.col_vec(0), x.col_vec(0));
    }

    #[test]
    fn two_layer_matches_hand_unrolled_chain() {
        let w1 = Matrix::from_rows(&[&[0.5, -1.0], &[0.25, 2.0], &[-0.75, 0.1]]).unwrap();
        let b1 = vec![0.1, -0.2, 0.3];
        let w2 = Matrix::from_rows(&[&[1.0, -0.5, 2.0]]).unwrap();
        let b2 = vec![0.05];
        let m = MlpModel::new(vec![
            Layer::new(w1.clone(), b1.clone(), Activation::Tanh).unwrap(),
            Layer::new(w2.clone(), b2.clone(), Activation::Linear).unwrap(),
        ])
        .unwrap();
        let x = [0.3, -1.2];
        let h: Vec<f64> = (0..3)
            .map(|o| libm::tanh(w1[(o, 0)] * x[0] + w1[(o, 1)] * x[1] + b1[o]))
            .collect();
        let expect = w2[(0, 0)] * h[0] + w2[(0, 1)] * h[1] + w2[(0, 2)] * h[2] + b2[0];
        let got = m.forward(&Matrix::new(1, 2, x.to_vec()).unwrap()).unwrap();
        assert!((got[(0, 0)] - expect).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = MlpModel::thermal_default(1);
        assert!(matches!(m.forward(&Matrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn new_rejects_broken_chain() {
        let r = MlpModel::new(vec![Layer::zeros(4, 3, Activation::Tanh), Layer::zeros(2, 1, Activation::Linear)]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn build_is_seed_deterministic() {
        assert_eq!(MlpModel::thermal_default(5), MlpModel::thermal_default(5));
        assert_ne!(MlpModel::thermal_default(5), MlpModel::thermal_default(6));
        let m = MlpModel::thermal_default(5);
        assert_eq!((m.input_dim(), m.output_dim(), m.len()), (4, 1, 3));
    }
}
