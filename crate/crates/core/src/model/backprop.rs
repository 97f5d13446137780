use alloc::format;
use alloc::vec::Vec;

use super::MlpModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Gradient of a scalar loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn scale(&mut self, s: f64) {
        for v in self.weights.data_mut() {
            *v *= s;
        }
        for v in &mut self.bias {
            *v *= s;
        }
    }

    pub fn accumulate(&mut self, other: &LayerGrad) {
        for (a, b) in self.weights.data_mut().iter_mut().zip(other.weights.data()) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Activations recorded by a forward pass: `activations[0]` is the input,
/// `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace holds at least the input")
    }
}

pub fn forward_trace(model: &MlpModel, x: &Matrix) -> Result<Trace> {
    if x.cols() != model.input_dim() {
        return Err(Error::shape(format!(
            "model expects {} input columns, got {}",
            model.input_dim(),
            x.cols()
        )));
    }
    let mut activations = Vec::with_capacity(model.len() + 1);
    activations.push(x.clone());
    for l in model.layers() {
        let next = l.forward(activations.last().expect("non-empty"))?;
        activations.push(next);
    }
    Ok(Trace { activations })
}

/// Back-propagates `grad_output` (∂L/∂output, `N × output_dim`).
///
/// Frozen layers get `None` but still pass gradients through to the layers
/// below them. When `want_input_grad` is set the gradient with respect to the
/// network input is returned as well.
pub fn backward(
    model: &MlpModel,
    trace: &Trace,
    grad_output: &Matrix,
    want_input_grad: bool,
) -> Result<(Vec<Option<LayerGrad>>, Option<Matrix>)> {
    let n_layers = model.len();
    if trace.activations.len() != n_layers + 1 {
        return Err(Error::shape("trace does not belong to this model"));
    }
    if grad_output.shape() != trace.output().shape() {
        return Err(Error::shape(format!(
            "output gradient is {}x{}, expected {}x{}",
            grad_output.rows(),
            grad_output.cols(),
            trace.output().rows(),
            trace.output().cols()
        )));
    }
    let lowest = if want_input_grad {
        0
    } else {
        match model.layers().iter().position(|l| !l.frozen) {
            Some(i) => i,
            None => return Ok(((0..n_layers).map(|_| None).collect(), None)),
        }
    };

    let mut grads: Vec<Option<LayerGrad>> = (0..n_layers).map(|_| None).collect();
    let mut upstream = grad_output.clone();
    for i in (lowest..n_layers).rev() {
        let layer = model.layer(i);
        let out = &trace.activations[i + 1];
        let input = &trace.activations[i];
        // dZ = dA ⊙ act'(A)
        let mut dz = upstream;
        for (d, a) in dz.data_mut().iter_mut().zip(out.data()) {
            *d *= layer.activation.derivative_from_output(*a);
        }
        if !layer.frozen {
            let weights = dz.transposed_matmul(input)?;
            let mut bias = alloc::vec![0.0; layer.outputs()];
            for r in 0..dz.rows() {
                for (b, v) in bias.iter_mut().zip(dz.row(r)) {
                    *b += v;
                }
            }
            grads[i] = Some(LayerGrad { weights, bias });
        }
        if i == lowest && !want_input_grad {
            return Ok((grads, None));
        }
        upstream = dz.matmul(&layer.weights)?;
    }
    Ok((grads, Some(upstream)))
}

/// Mean squared error over every entry of `pred`, and its gradient.
pub fn mse_with_grad(pred: &Matrix, target: &Matrix, weight: f64) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let count = pred.data().len();
    if count == 0 {
        return Err(Error::Empty("mse over an empty batch".into()));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let e = p - t;
        loss += e * e;
        *g = weight * 2.0 * e * inv;
    }
    Ok((weight * loss * inv, grad))
}

/// Adds `l2 · Σ‖W‖²` over trainable layers to `grads`; returns the penalty.
pub(crate) fn add_l2(model: &MlpModel, grads: &mut [Option<LayerGrad>], l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    for (layer, g) in model.layers().iter().zip(grads.iter_mut()) {
        if let Some(g) = g {
            for (gw, w) in g.weights.data_mut().iter_mut().zip(layer.weights.data()) {
                penalty += w * w;
                *gw += 2.0 * l2 * w;
            }
        }
    }
    l2 * penalty
}

/// MSE loss and per-layer gradients (trainable layers only).
pub fn gradients(model: &MlpModel, x: &Matrix, y: &Matrix) -> Result<(f64, Vec<Option<LayerGrad>>)> {
    mse_gradients(model, x, y, 0.0)
}

/// MSE plus an L2 weight penalty `l2 · Σ‖W‖²` on the trainable layers.
pub fn mse_gradients(model: &MlpModel, x: &Matrix, y: &Matrix, l2: f64) -> Result<(f64, Vec<Option<LayerGrad>>)> {
    if x.rows() != y.rows() || y.cols() != model.output_dim() {
        return Err(Error::shape(format!(
            "inputs {}x{} and targets {}x{} do not fit a model with output width {}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols(),
            model.output_dim()
        )));
    }
    let trace = forward_trace(model, x)?;
    let (loss, grad_out) = mse_with_grad(trace.output(), y, 1.0)?;
    let (mut grads, _) = backward(model, &trace, &grad_out, false)?;
    let penalty = add_l2(model, &mut grads, l2);
    Ok((loss + penalty, grads))
}
