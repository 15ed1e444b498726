//! Losses, splits, metrics and the gradient-descent loop shared by every model.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::{CurveSet, ResponseKind};
use crate::error::{invalid, numeric, Error, Result};
use crate::math;
use crate::model::{Predictor, Trainable};
use crate::rng::{self, streams};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    SquaredError,
    BinaryCrossEntropy,
}

impl LossKind {
    /// Squared error for continuous responses, cross-entropy for binary ones.
    pub fn for_response(kind: ResponseKind) -> Self {
        match kind {
            ResponseKind::Continuous => LossKind::SquaredError,
            ResponseKind::Binary => LossKind::BinaryCrossEntropy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared-error",
            LossKind::BinaryCrossEntropy => "binary-cross-entropy",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "squared-error" | "mse" => Ok(LossKind::SquaredError),
            "binary-cross-entropy" | "bce" => Ok(LossKind::BinaryCrossEntropy),
            other => Err(invalid!(
                "unknown loss '{other}' (expected squared-error, binary-cross-entropy)"
            )),
        }
    }
}

/// Loss of one prediction and its derivative in `yhat`.
pub fn loss_and_grad(kind: LossKind, yhat: f64, y: f64) -> Result<(f64, f64)> {
    match kind {
        LossKind::SquaredError => {
            let r = yhat - y;
            Ok((r * r, 2.0 * r))
        }
        LossKind::BinaryCrossEntropy => {
            if y != 0.0 && y != 1.0 {
                return Err(invalid!("cross-entropy needs y in {{0, 1}}, got {y}"));
            }
            let p = yhat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let loss = -(y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p));
            Ok((loss, (p - y) / (p * (1.0 - p))))
        }
    }
}

/// Mean loss over a batch and `∂(mean loss)/∂ŷᵢ` for every sample.
pub fn batch_loss(kind: LossKind, yhat: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if yhat.len() != y.len() || y.is_empty() {
        return Err(invalid!(
            "batch loss needs equal, nonzero lengths ({} vs {})",
            yhat.len(),
            y.len()
        ));
    }
    let n = y.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(y.len());
    for (&p, &t) in yhat.iter().zip(y) {
        let (l, g) = loss_and_grad(kind, p, t)?;
        total += l;
        grads.push(g / n);
    }
    Ok((total / n, grads))
}

/// Mean loss of `model` on `data`.
pub fn mean_loss<P: Predictor + ?Sized>(model: &P, data: &CurveSet, kind: LossKind) -> Result<f64> {
    let yhat = model.predict(data)?;
    Ok(batch_loss(kind, &yhat, data.responses())?.0)
}

/// Optimizer and stopping settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// `None` trains on the full batch.
    pub batch_size: Option<usize>,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Smallest validation decrease that counts as an improvement.
    pub min_delta: f64,
    /// Seeds mini-batch shuffling.
    pub seed: u64,
    pub early_stopping: bool,
    /// Full-batch only: a step that raises the training loss is rejected and
    /// retried with half the learning rate.
    pub halve_on_increase: bool,
    /// Full-batch only: factor applied to the learning rate after every
    /// accepted step. `1.0` keeps it fixed; values above one let it recover
    /// after halvings and cross flat regions faster.
    pub lr_growth: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_epochs: 2000,
            batch_size: None,
            patience: 50,
            min_delta: 1e-5,
            seed: 0,
            early_stopping: true,
            halve_on_increase: true,
            lr_growth: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid!("learning rate must be positive and finite, got {}", self.lr));
        }
        if self.early_stopping && self.patience == 0 {
            return Err(invalid!("patience must be at least 1 when early stopping is on"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(invalid!("min_delta must be nonnegative, got {}", self.min_delta));
        }
        if !(self.lr_growth >= 1.0) || !self.lr_growth.is_finite() {
            return Err(invalid!(
                "lr_growth must be a finite number >= 1, got {}",
                self.lr_growth
            ));
        }
        if self.batch_size == Some(0) {
            return Err(invalid!("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Disjoint train, validation and test index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl Split {
    /// Checks disjointness and that every index is below `n`.
    pub fn new(train: Vec<usize>, val: Vec<usize>, test: Vec<usize>, n: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(invalid!("the training set is empty"));
        }
        let mut seen = alloc::vec![false; n];
        for &i in train.iter().chain(&val).chain(&test) {
            if i >= n {
                return Err(invalid!("split index {i} out of range for {n} samples"));
            }
            if seen[i] {
                return Err(invalid!("split index {i} appears more than once"));
            }
            seen[i] = true;
        }
        Ok(Self { train, val, test })
    }

    /// A seeded random split with `n_test` test and `n_val` validation
    /// samples; the rest train.
    pub fn random(n: usize, n_test: usize, n_val: usize, seed: u64) -> Result<Self> {
        if n_test + n_val >= n {
            return Err(invalid!(
                "cannot take {n_test} test and {n_val} validation samples from {n}"
            ));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, streams::SPLIT));
        let test = idx[..n_test].to_vec();
        let val = idx[n_test..n_test + n_val].to_vec();
        let train = idx[n_test + n_val..].to_vec();
        Self::new(train, val, test, n)
    }

    /// One third of the data for testing; with `validation`, half of the
    /// remaining training data becomes the validation set. For 1500 samples
    /// this gives 1000/500 or 500/500/500.
    pub fn standard(n: usize, validation: bool, seed: u64) -> Result<Self> {
        let n_test = n / 3;
        let n_val = if validation { (n - n_test) / 2 } else { 0 };
        Self::random(n, n_test, n_val, seed)
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }
    pub fn val(&self) -> &[usize] {
        &self.val
    }
    pub fn test(&self) -> &[usize] {
        &self.test
    }
}

/// Prediction quality on one index set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    /// Fraction misclassified at threshold 0.5 (`ŷ = 0.5` counts as positive). Binary responses only.
    pub classification_error: Option<f64>,
    /// Mean negative log-likelihood (cross-entropy). Binary responses only.
    pub mean_log_likelihood: Option<f64>,
}

/// Metrics of fixed predictions against responses.
pub fn metrics_from_predictions(yhat: &[f64], y: &[f64], kind: ResponseKind) -> Result<Metrics> {
    if yhat.is_empty() || yhat.len() != y.len() {
        return Err(invalid!(
            "metrics need equal, nonzero lengths ({} vs {})",
            yhat.len(),
            y.len()
        ));
    }
    let n = y.len() as f64;
    let mse = yhat.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let (classification_error, mean_log_likelihood) = match kind {
        ResponseKind::Continuous => (None, None),
        ResponseKind::Binary => {
            let wrong = yhat.iter().zip(y).filter(|(&p, &t)| (p >= 0.5) != (t == 1.0)).count();
            let nll = batch_loss(LossKind::BinaryCrossEntropy, yhat, y)?.0;
            (Some(wrong as f64 / n), Some(nll))
        }
    };
    Ok(Metrics {
        n: y.len(),
        rmse: math::sqrt(mse),
        classification_error,
        mean_log_likelihood,
    })
}

/// Metrics of `model` on the rows `idx` of `data`.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, data: &CurveSet, idx: &[usize]) -> Result<Metrics> {
    if idx.is_empty() {
        return Err(invalid!("cannot evaluate on an empty index set"));
    }
    let sub = data.subset(idx)?;
    let yhat = model.predict(&sub)?;
    metrics_from_predictions(&yhat, sub.responses(), sub.response_kind())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    /// The safeguard halved the learning rate below any useful size.
    StepUnderflow,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "max-epochs",
            StopReason::EarlyStopping => "early-stopping",
            StopReason::StepUnderflow => "step-underflow",
        }
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean training loss; entry `e` is the loss after `e` epochs.
    pub train_loss: Vec<f64>,
    /// Mean validation loss, same indexing; empty without a validation set.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    /// Learning rate after any safeguard halvings.
    pub final_lr: f64,
    pub parameter_count: usize,
    pub train_metrics: Metrics,
    pub val_metrics: Option<Metrics>,
    pub test_metrics: Option<Metrics>,
    /// Filled in by callers that can read a clock.
    pub wall_time_secs: Option<f64>,
}

/// Learning rates are not halved past `lr · 2⁻⁴⁰`.
const MAX_HALVINGS: u32 = 40;

/// Trains `model` in place on `split.train()`.
///
/// Each epoch takes one full-batch step (or one pass of shuffled mini-batches)
/// on the mean loss. With early stopping, training halts after `patience`
/// epochs without a validation improvement larger than `min_delta`, and the
/// parameters of the best validation epoch are restored. Without it the final
/// parameters are kept. Metrics are then computed on every non-empty index set.
pub fn fit<M: Trainable>(model: &mut M, data: &CurveSet, split: &Split, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let n = data.len();
    Split::new(split.train.clone(), split.val.clone(), split.test.clone(), n)?;
    let kind = LossKind::for_response(data.response_kind());
    let train = data.subset(&split.train)?;
    let val = if cfg.early_stopping && !split.val.is_empty() {
        Some(data.subset(&split.val)?)
    } else {
        None
    };

    let (yhat0, mut cache) = model.forward_batch(&train)?;
    let (mut loss, mut dl) = batch_loss(kind, &yhat0, train.responses())?;
    if !loss.is_finite() {
        return Err(numeric!("training loss is not finite before the first epoch"));
    }
    let mut train_loss = alloc::vec![loss];
    let mut val_loss = Vec::new();
    let mut best_val = f64::INFINITY;
    if let Some(v) = &val {
        best_val = mean_loss(model, v, kind)?;
        val_loss.push(best_val);
    }
    // Epoch 0 is the best epoch until a validation improvement says otherwise.
    let mut best_model: Option<M> = val.as_ref().map(|_| model.clone());
    let mut best_epoch = 0;
    let mut waited = 0;
    let mut lr = cfg.lr;
    let lr_floor = cfg.lr / (1u64 << MAX_HALVINGS) as f64;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs_run = 0;
    let full_batch = cfg.batch_size.is_none_or(|b| b >= train.len());
    let mut shuffle_rng = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        if full_batch {
            let grads = model.backward_batch(&cache, &dl)?;
            loop {
                let mut candidate = model.clone();
                candidate.apply_gradients(&grads, lr).map_err(|e| at_epoch(e, epoch))?;
                let (c_yhat, c_cache) = candidate.forward_batch(&train)?;
                let (c_loss, c_dl) = batch_loss(kind, &c_yhat, train.responses())?;
                let worse = !c_loss.is_finite() || c_loss > loss;
                if cfg.halve_on_increase && worse {
                    lr *= 0.5;
                    if lr < lr_floor {
                        stop_reason = StopReason::StepUnderflow;
                        break 'epochs;
                    }
                    continue;
                }
                if !c_loss.is_finite() {
                    return Err(numeric!("training diverged at epoch {epoch}: loss is not finite"));
                }
                *model = candidate;
                (cache, loss, dl) = (c_cache, c_loss, c_dl);
                lr *= cfg.lr_growth;
                break;
            }
        } else {
            let b = cfg.batch_size.unwrap_or(train.len());
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(b) {
                let batch = train.subset(chunk)?;
                let (p, c) = model.forward_batch(&batch)?;
                let (_, g) = batch_loss(kind, &p, batch.responses())?;
                let grads = model.backward_batch(&c, &g)?;
                model.apply_gradients(&grads, lr).map_err(|e| at_epoch(e, epoch))?;
            }
            let yhat;
            (yhat, cache) = model.forward_batch(&train)?;
            (loss, dl) = batch_loss(kind, &yhat, train.responses())?;
            if !loss.is_finite() {
                return Err(numeric!("training diverged at epoch {epoch}: loss is not finite"));
            }
        }
        epochs_run = epoch;
        train_loss.push(loss);

        if let Some(v) = &val {
            let vl = mean_loss(model, v, kind)?;
            if !vl.is_finite() {
                return Err(numeric!("validation loss is not finite at epoch {epoch}"));
            }
            val_loss.push(vl);
            if vl < best_val - cfg.min_delta {
                best_val = vl;
                best_epoch = epoch;
                best_model = Some(model.clone());
                waited = 0;
            } else {
                waited += 1;
                if waited >= cfg.patience {
                    stop_reason = StopReason::EarlyStopping;
                    break;
                }
            }
        }
    }

    match best_model {
        Some(best) => *model = best,
        None => best_epoch = epochs_run,
    }

    let train_metrics = evaluate(model, data, &split.train)?;
    let val_metrics = if split.val.is_empty() {
        None
    } else {
        Some(evaluate(model, data, &split.val)?)
    };
    let test_metrics = if split.test.is_empty() {
        None
    } else {
        Some(evaluate(model, data, &split.test)?)
    };
    Ok(FitReport {
        train_loss,
        val_loss,
        best_epoch,
        epochs_run,
        stop_reason,
        final_lr: lr,
        parameter_count: model.parameter_count(),
        train_metrics,
        val_metrics,
        test_metrics,
        wall_time_secs: None,
    })
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NumericFailure(m) => Error::NumericFailure(alloc::format!("{m} (epoch {epoch})")),
        other => other,
    }
}
