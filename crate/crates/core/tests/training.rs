//! Training loop behaviour on small problems.

use std::sync::Arc;

use funcnet_core::activation::Activation;
use funcnet_core::baselines::MlpModel;
use funcnet_core::data::CurveSet;
use funcnet_core::fbnn::{FbnnArch, FbnnModel};
use funcnet_core::fdnn::{FdnnArch, FdnnModel};
use funcnet_core::grid::Grid;
use funcnet_core::model::{Predictor, Trainable};
use funcnet_core::simulate::{simulate, MaternParams, Scenario, ScenarioKind};
use funcnet_core::training::{batch_loss, fit, loss_and_grad, mean_loss, LossKind, Split, StopReason, TrainConfig};
use proptest::prelude::*;

fn unit(m: usize) -> Arc<Grid> {
    Arc::new(Grid::uniform(m, 0.0, 1.0).unwrap())
}

fn data(kind: ScenarioKind, n: usize, seed: u64) -> CurveSet {
    simulate(&Scenario::continuous(kind), n, 30, &MaternParams::default(), seed).unwrap()
}

fn fdnn(seed: u64) -> FdnnModel {
    let arch = FdnnArch::new(1, unit(30), Activation::Linear).hidden_layer(4, unit(15), Activation::Tanh);
    FdnnModel::init(&arch, seed).unwrap()
}

#[test]
fn one_small_step_lowers_the_training_loss() {
    for seed in 0..20 {
        let d = data(ScenarioKind::SingleIndex, 40, seed);
        let mut model = fdnn(seed);
        let (yhat, cache) = model.forward_batch(&d).unwrap();
        let (before, dl) = batch_loss(LossKind::SquaredError, &yhat, d.responses()).unwrap();
        let grads = model.backward_batch(&cache, &dl).unwrap();
        model.apply_gradients(&grads, 1e-3).unwrap();
        let after = mean_loss(&model, &d, LossKind::SquaredError).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn one_small_basis_network_step_lowers_the_training_loss() {
    let arch = FbnnArch::new(1, unit(30), Activation::Linear).hidden_layer(3, unit(15), Activation::Tanh);
    for seed in 0..20 {
        let d = data(ScenarioKind::Quadratic, 40, seed);
        let mut model = FbnnModel::init(&arch, seed).unwrap();
        let (yhat, cache) = model.forward_batch(&d).unwrap();
        let (before, dl) = batch_loss(LossKind::SquaredError, &yhat, d.responses()).unwrap();
        let grads = model.backward_batch(&cache, &dl).unwrap();
        model.apply_gradients(&grads, 1e-4).unwrap();
        let after = mean_loss(&model, &d, LossKind::SquaredError).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn full_batch_loss_never_rises_with_the_safeguard() {
    let d = data(ScenarioKind::Quadratic, 120, 3);
    let split = Split::random(120, 20, 0, 3).unwrap();
    let cfg = TrainConfig {
        max_epochs: 150,
        early_stopping: false,
        lr: 0.05,
        ..TrainConfig::default()
    };
    let report = fit(&mut fdnn(3), &d, &split, &cfg).unwrap();
    assert_eq!(report.train_loss.len(), report.epochs_run + 1);
    for w in report.train_loss.windows(2) {
        assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
    }
    assert!(report.val_loss.is_empty());
}

#[test]
fn early_stopping_restores_the_best_parameters() {
    let d = data(ScenarioKind::Linear, 90, 4);
    let split = Split::random(90, 20, 20, 4).unwrap();
    let cfg = TrainConfig {
        max_epochs: 400,
        patience: 10,
        lr: 0.2,
        ..TrainConfig::default()
    };
    let mut model = fdnn(4);
    let report = fit(&mut model, &d, &split, &cfg).unwrap();
    assert!(report.best_epoch <= report.epochs_run);
    let best = report.val_loss[report.best_epoch];
    // Later epochs only count as better when they improve by more than min_delta.
    assert!(report.val_loss.iter().all(|&v| v >= best - cfg.min_delta));
    let val = d.subset(split.val()).unwrap();
    assert_eq!(mean_loss(&model, &val, LossKind::SquaredError).unwrap(), best);
    if report.stop_reason == StopReason::EarlyStopping {
        assert!(report.epochs_run - report.best_epoch >= cfg.patience);
    }
}

#[test]
fn zero_epochs_reports_the_initial_model() {
    let d = data(ScenarioKind::Linear, 30, 1);
    let split = Split::random(30, 10, 5, 1).unwrap();
    let mut model = fdnn(1);
    let initial = model.clone();
    let cfg = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let report = fit(&mut model, &d, &split, &cfg).unwrap();
    assert_eq!(model, initial);
    assert_eq!(report.epochs_run, 0);
    assert_eq!(report.best_epoch, 0);
    let test = report.test_metrics.unwrap();
    let yhat = initial.predict(&d.subset(split.test()).unwrap()).unwrap();
    let y = d.subset(split.test()).unwrap().responses().to_vec();
    let rmse = (yhat.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    assert!((test.rmse - rmse).abs() <= 1e-12);
}

#[test]
fn fitting_is_deterministic() {
    let d = data(ScenarioKind::Linear, 60, 6);
    let split = Split::standard(60, true, 6).unwrap();
    let cfg = TrainConfig {
        max_epochs: 30,
        batch_size: Some(8),
        seed: 6,
        ..TrainConfig::default()
    };
    let arch = FbnnArch::new(1, unit(30), Activation::Linear).hidden_layer(2, unit(15), Activation::Tanh);
    let run = || {
        let mut m = FbnnModel::init(&arch, 6).unwrap();
        let r = fit(&mut m, &d, &split, &cfg).unwrap();
        (m.parameters(), r.train_loss, r.val_loss)
    };
    assert_eq!(run(), run());
}

#[test]
fn mini_batches_cover_the_training_set() {
    let d = data(ScenarioKind::Linear, 50, 2);
    let split = Split::random(50, 10, 0, 2).unwrap();
    let cfg = TrainConfig {
        max_epochs: 20,
        batch_size: Some(7),
        early_stopping: false,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut mlp = MlpModel::init(unit(30), 1, &[4], Activation::Tanh, Activation::Linear, 2).unwrap();
    let report = fit(&mut mlp, &d, &split, &cfg).unwrap();
    assert_eq!(report.epochs_run, 20);
    assert!(report.train_loss[20] < report.train_loss[0]);
}

#[test]
fn loss_examples() {
    assert_eq!(loss_and_grad(LossKind::SquaredError, 1.5, 1.5).unwrap(), (0.0, 0.0));
    let (l, g) = loss_and_grad(LossKind::BinaryCrossEntropy, 0.5, 1.0).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((g + 2.0).abs() < 1e-15);
    assert!(loss_and_grad(LossKind::BinaryCrossEntropy, 0.5, 0.3).is_err());
}

proptest! {
    #[test]
    fn loss_gradients_match_finite_differences(yhat in 0.05f64..0.95, label in 0u8..2, target in -3.0f64..3.0) {
        let h = 1e-6;
        for (kind, y) in [(LossKind::SquaredError, target), (LossKind::BinaryCrossEntropy, f64::from(label))] {
            let (_, g) = loss_and_grad(kind, yhat, y).unwrap();
            let up = loss_and_grad(kind, yhat + h, y).unwrap().0;
            let dn = loss_and_grad(kind, yhat - h, y).unwrap().0;
            prop_assert!((g - (up - dn) / (2.0 * h)).abs() <= 1e-8 * (1.0 + g.abs()), "{kind}: {g}");
        }
    }

    #[test]
    fn standard_splits_are_disjoint(n in 3usize..3000, validation in any::<bool>(), seed in any::<u64>()) {
        let s = Split::standard(n, validation, seed).unwrap();
        let mut all: Vec<usize> = s.train().iter().chain(s.val()).chain(s.test()).copied().collect();
        prop_assert_eq!(all.len(), n);
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.test().len(), n / 3);
    }
}
