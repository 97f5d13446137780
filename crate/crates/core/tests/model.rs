mod common;

use common::*;
use fedtherm_core::model::{evaluate_predictions, train, train_xy, HeadSpec, MlpModel, Optimizer, TrainConfig};
use fedtherm_core::transfer::fine_tune;
use fedtherm_core::{Activation, Dataset, Matrix};

/// Least-squares fit through the normal equations, used as the oracle for
/// what a single linear layer should reach.
fn least_squares_mse(x: &Matrix, y: &[f64]) -> f64 {
    let n = x.rows();
    let design = Matrix::from_fn(n, x.cols() + 1, |i, j| if j == x.cols() { 1.0 } else { x[(i, j)] });
    let gram = design.transposed_matmul(&design).unwrap();
    let rhs = design.transposed_matmul(&Matrix::column(y)).unwrap();
    let beta = fedtherm_core::linalg::cholesky_solve(&gram, &rhs).unwrap();
    let fit = design.matmul(&beta).unwrap();
    (0..n).map(|i| (fit[(i, 0)] - y[i]).powi(2)).sum::<f64>() / n as f64
}

#[test]
fn linear_layer_learns_exactly_linear_data() {
    let mut r = rng(3);
    let x = random_matrix(256, 3, 1.0, &mut r);
    let y: Vec<f64> = (0..256).map(|i| 0.8 * x[(i, 0)] - 1.2 * x[(i, 1)] + 0.3 * x[(i, 2)] + 0.1).collect();
    assert!(least_squares_mse(&x, &y) < 1e-20);
    let model = MlpModel::build(&[3, 1], Activation::Linear, Activation::Linear, 1).unwrap();
    let cfg = TrainConfig { epochs: 200, learning_rate: 0.01, batch_size: 32, ..TrainConfig::default() };
    let (trained, history) = train_xy(&model, &x, &Matrix::column(&y), &cfg).unwrap();
    assert_eq!(history.len(), 200);
    let pred = trained.forward(&x).unwrap().into_data();
    let m = evaluate_predictions(&pred, &y).unwrap();
    assert!(m.mse < 1e-4, "mse {}", m.mse);
}

#[test]
fn training_is_reproducible_and_respects_frozen_layers() {
    let mut r = rng(4);
    let x = random_matrix(100, 4, 1.0, &mut r);
    let y = Matrix::from_fn(100, 1, |i, _| (x[(i, 0)] * x[(i, 1)]).tanh());
    let mut model = MlpModel::thermal_default(9);
    model.set_trainable_mask(&[false, true, true]).unwrap();
    for optimizer in [Optimizer::Sgd, Optimizer::ADAM] {
        let cfg = TrainConfig { epochs: 5, optimizer, seed: 12, ..TrainConfig::default() };
        let (a, _) = train_xy(&model, &x, &y, &cfg).unwrap();
        let (b, _) = train_xy(&model, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layer(0), model.layer(0));
        assert_ne!(a.layer(1), model.layer(1));
    }
    let mut frozen = model.clone();
    frozen.set_frozen(true);
    assert!(train_xy(&frozen, &x, &y, &TrainConfig::default()).is_err());
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn metric_identities() {
    let t = [1.0, 2.0, 4.0, 7.0];
    let perfect = evaluate_predictions(&t, &t).unwrap();
    assert_eq!((perfect.mse, perfect.r2), (0.0, Some(1.0)));
    let mean = [3.5; 4];
    assert_eq!(evaluate_predictions(&mean, &t).unwrap().r2, Some(0.0));
    let offset: Vec<f64> = t.iter().map(|v| v + 0.5).collect();
    assert!((evaluate_predictions(&offset, &t).unwrap().mse - 0.25).abs() < 1e-15);
    let flat = evaluate_predictions(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
    assert_eq!(flat.r2, None);
    assert_eq!(flat.mse, 2.5);
}

#[test]
fn fine_tuning_leaves_the_base_layers_untouched() {
    let mut r = rng(5);
    let x = random_matrix(200, 4, 1.0, &mut r);
    let y = (0..200).map(|i| x[(i, 0)] - 0.5 * x[(i, 3)]).collect();
    let data = Dataset::new(x, y, 60.0).unwrap();
    let base = train(&MlpModel::thermal_default(1), &data, &TrainConfig { epochs: 5, ..TrainConfig::default() })
        .unwrap()
        .0;
    let tuned = fine_tune(&base, &data, &HeadSpec::default(), &TrainConfig { epochs: 5, ..TrainConfig::default() })
        .unwrap();
    for i in 0..base.len() - 1 {
        assert_eq!(tuned.layer(i).weights, base.layer(i).weights);
        assert_eq!(tuned.layer(i).bias, base.layer(i).bias);
        assert!(tuned.layer(i).frozen);
    }
    assert_eq!(tuned.layer(base.len() - 1).weights.shape(), (16, 32));
    assert_eq!(tuned.layer(base.len()).weights.shape(), (1, 16));
}
