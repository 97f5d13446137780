//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use fedtherm_core::federation::{ModelPayload, PayloadLayer};
use fedtherm_core::model::{Layer, MlpModel};
use fedtherm_core::transfer::{DdaBatch, DdaWeights};
use fedtherm_core::wire::Message;
use fedtherm_core::rng::{self, Rng};
use fedtherm_core::{Activation, Matrix};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::from_seed(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Biased squared MMD summed term by term with nothing shared with the
/// library code path.
pub fn mmd_double_loop(xs: &Matrix, xt: &Matrix, sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let mut d = 0.0;
        for i in 0..a.len() {
            d += (a[i] - b[i]) * (a[i] - b[i]);
        }
        (-d / (2.0 * sigma * sigma)).exp()
    };
    // Kahan summation keeps the oracle's own rounding well below the
    // tolerance it is compared at.
    let sum = |a: &Matrix, b: &Matrix| {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let y = k(a.row(i), b.row(j)) - c;
                let t = s + y;
                c = (t - s) - y;
                s = t;
            }
        }
        s / (a.rows() as f64 * b.rows() as f64)
    };
    (sum(xs, xs) + sum(xt, xt) - 2.0 * sum(xs, xt)).max(0.0)
}

pub fn random_symmetric(n: usize, rng: &mut Rng) -> Matrix {
    let a = random_matrix(n, n, 1.0, rng);
    Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// `M·Mᵀ + n·I`, comfortably positive definite.
pub fn random_spd(n: usize, rng: &mut Rng) -> Matrix {
    let m = random_matrix(n, n, 1.0, rng);
    let mut s = m.matmul_transposed(&m).unwrap();
    for i in 0..n {
        s[(i, i)] += n as f64;
    }
    s
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A random net with 1 to 3 layers of at most 8 units.
pub fn random_net(inputs: usize, rng: &mut Rng) -> MlpModel {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![inputs];
    for _ in 1..depth {
        sizes.push(rng.random_range(1..=8));
    }
    sizes.push(rng.random_range(1..=3));
    let hidden = [Activation::Tanh, Activation::Relu][rng.random_range(0..2)];
    let model = MlpModel::build(&sizes, hidden, Activation::Linear, rng.random()).unwrap();
    // Nudge biases away from zero so ReLU kinks are unlikely to sit on a sample.
    let mut model = model;
    for layer in model.layers_mut() {
        for b in &mut layer.bias {
            *b += rng.random_range(-0.5..0.5);
        }
    }
    model
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between `grads` and central differences of
/// `loss` over every weight and bias of every layer that has a gradient.
pub fn max_fd_error(
    model: &MlpModel,
    grads: &[Option<fedtherm_core::model::LayerGrad>],
    h: f64,
    loss: impl Fn(&MlpModel) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (li, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        for p in 0..g.weights.data().len() {
            let shifted = |d: f64| {
                let mut m = model.clone();
                m.layers_mut()[li].weights.data_mut()[p] += d;
                loss(&m)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g.weights.data()[p], fd));
        }
        for p in 0..g.bias.len() {
            let shifted = |d: f64| {
                let mut m = model.clone();
                m.layers_mut()[li].bias[p] += d;
                loss(&m)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g.bias[p], fd));
        }
    }
    worst
}

pub fn random_f64(r: &mut Rng) -> f64 {
    // Mix ordinary values with awkward ones: signed zero, subnormals, extremes.
    match r.random_range(0..10) {
        0 => -0.0,
        1 => f64::MIN_POSITIVE / 3.0,
        2 => f64::MAX,
        3 => f64::from_bits(r.random::<u64>() & !(0x7ffu64 << 52) | (0x3ffu64 << 52)),
        _ => r.random_range(-1e6..1e6),
    }
}

pub fn random_layer(r: &mut Rng, inputs: usize) -> Layer {
    let outputs = r.random_range(1..6);
    let weights = Matrix::from_fn(outputs, inputs, |_, _| random_f64(r));
    let bias = (0..outputs).map(|_| random_f64(r)).collect();
    let act = [Activation::Tanh, Activation::Relu, Activation::Linear][r.random_range(0..3)];
    Layer::new(weights, bias, act).unwrap().frozen(r.random())
}

pub fn random_model(r: &mut Rng) -> MlpModel {
    let mut inputs = r.random_range(1..6);
    let mut layers = Vec::new();
    for _ in 0..r.random_range(1..4) {
        let l = random_layer(r, inputs);
        inputs = l.outputs();
        layers.push(l);
    }
    MlpModel::new(layers).unwrap()
}

pub fn random_payload(r: &mut Rng) -> ModelPayload {
    let model = random_model(r);
    let layers = (0..model.len())
        .filter(|_| r.random_bool(0.7))
        .map(|index| PayloadLayer { index, layer: model.layer(index).clone() })
        .collect();
    ModelPayload { layers, n_k: r.random(), relevance: r.random_range(0.0..=1.0) }
}

pub fn random_string(r: &mut Rng) -> String {
    let n = r.random_range(0..20);
    (0..n).map(|_| ['a', 'Z', '7', '-', 'é', '雪', ' '][r.random_range(0..7)]).collect()
}

pub fn random_message(r: &mut Rng) -> Message {
    match r.random_range(0..6) {
        0 => Message::Hello {
            client_id: random_string(r),
            reference: r.random_bool(0.5).then(|| {
                let rows = r.random_range(0..5);
                Matrix::from_fn(rows, 3, |_, _| random_f64(r))
            }),
        },
        1 => Message::GlobalModel { round: r.random(), payload: random_payload(r) },
        2 => Message::UpdateSubmit { round: r.random(), local_loss: random_f64(r), payload: random_payload(r) },
        3 => Message::RoundAck { round: r.random() },
        4 => Message::ClientError { round: r.random(), message: random_string(r) },
        _ => Message::Shutdown { payload: r.random_bool(0.5).then(|| random_payload(r)) },
    }
}

/// A DDA composite-loss problem: encoder stacked with a regression head, a
/// fixed decoder, a batch from two domains and positive loss weights.
pub struct DdaProblem {
    pub net: MlpModel,
    pub encoder_layers: usize,
    pub decoder: MlpModel,
    pub batch: DdaBatch,
    pub weights: DdaWeights,
    pub sigma: f64,
}

pub fn random_dda_problem(r: &mut Rng) -> DdaProblem {
    let d = r.random_range(1..=4);
    let latent = r.random_range(1..=4);
    let encoder_layers = r.random_range(1..=2);
    let mut sizes = vec![d];
    if encoder_layers == 2 {
        sizes.push(r.random_range(1..=8));
    }
    sizes.push(latent);
    let encoder = MlpModel::build(&sizes, Activation::Tanh, Activation::Tanh, r.random()).unwrap();
    let head = MlpModel::build(&[latent, 1], Activation::Tanh, Activation::Linear, r.random()).unwrap();
    let decoder = MlpModel::build(&[latent, d], Activation::Tanh, Activation::Linear, r.random()).unwrap();
    let net = encoder.stacked(&head).unwrap();
    let batch = DdaBatch {
        source_x: random_matrix(r.random_range(2..=8), d, 1.0, r),
        target_x: Matrix::from_fn(r.random_range(2..=8), d, |_, _| 0.7 + r.random_range(-1.0..1.0)),
        target_y: Matrix::zeros(0, 1),
    };
    let batch = DdaBatch { target_y: random_matrix(batch.target_x.rows(), 1, 1.0, r), ..batch };
    let weights = DdaWeights {
        alpha: r.random_range(0.1..2.0),
        beta: r.random_range(0.1..2.0),
        gamma: r.random_range(0.1..2.0),
        delta: r.random_range(0.001..0.1),
    };
    let sigma = r.random_range(0.5..2.0);
    DdaProblem { net, encoder_layers, decoder, batch, weights, sigma }
}
