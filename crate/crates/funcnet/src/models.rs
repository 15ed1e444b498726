//! Model selection, construction and fitting under the benchmark protocol.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use funcnet_core::activation::Activation;
use funcnet_core::baselines::{FlmModel, FnnModel, MlpModel};
use funcnet_core::bspline::BsplineBasis;
use funcnet_core::data::{CurveSet, ResponseKind, Standardizer};
use funcnet_core::fbnn::{FbnnArch, FbnnModel};
use funcnet_core::fdnn::{FdnnArch, FdnnModel};
use funcnet_core::grid::Grid;
use funcnet_core::model::{Predictor, Trainable};
use funcnet_core::training::{self, evaluate, FitReport, Metrics, Split, TrainConfig};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Flm,
    Fdnn,
    Fbnn,
    Fnn,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Flm,
        ModelKind::Fdnn,
        ModelKind::Fbnn,
        ModelKind::Fnn,
        ModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Flm => "flm",
            ModelKind::Fdnn => "fdnn",
            ModelKind::Fbnn => "fbnn",
            ModelKind::Fnn => "fnn",
            ModelKind::Mlp => "mlp",
        }
    }

    /// Whether the model is trained by gradient descent (and so can stop early).
    pub fn is_iterative(self) -> bool {
        self != ModelKind::Flm
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}' (valid: flm, fdnn, fbnn, fnn, mlp)")))
    }
}

/// A model as named on the command line: `fdnn`, `fbnn(4,4)`, `mlp(16):no-es`.
///
/// For FDNN and FBNN the sizes are the neurons of each continuous hidden
/// layer; for FNN the first size is the number of functional neurons and the
/// rest are dense hidden layers; for MLP they are the dense hidden layers.
/// `:no-es` trains to `max_epochs` without early stopping.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// `None` takes the sizes from [`ModelSettings`].
    pub sizes: Option<Vec<usize>>,
    pub early_stopping: bool,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            sizes: None,
            early_stopping: true,
        }
    }

    /// Early stopping needs a validation split.
    pub fn uses_validation(&self) -> bool {
        self.kind.is_iterative() && self.early_stopping
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if let Some(sizes) = &self.sizes {
            let s: Vec<String> = sizes.iter().map(|v| v.to_string()).collect();
            write!(f, "({})", s.join(","))?;
        }
        if !self.early_stopping && self.kind.is_iterative() {
            f.write_str(":no-es")?;
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("bad model '{s}': {why}"));
        let text = s.trim().to_ascii_lowercase();
        let (body, early_stopping) = match text.split_once(':') {
            Some((b, "no-es")) => (b.trim().to_string(), false),
            Some((_, other)) => return Err(bad(&format!("unknown suffix ':{other}' (only ':no-es')"))),
            None => (text.clone(), true),
        };
        let (name, sizes) = match body.split_once('(') {
            Some((name, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(|| bad("missing ')'"))?;
                let sizes = inner
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().ok().filter(|&n| n > 0))
                    .collect::<Option<Vec<usize>>>()
                    .ok_or_else(|| bad("sizes must be positive integers"))?;
                (name.trim().to_string(), Some(sizes))
            }
            None => (body, None),
        };
        let kind: ModelKind = name.parse()?;
        if kind == ModelKind::Flm && sizes.is_some() {
            return Err(bad("flm takes no sizes"));
        }
        if kind == ModelKind::Flm && !early_stopping {
            return Err(bad("flm is not trained iteratively"));
        }
        Ok(Self {
            kind,
            sizes,
            early_stopping,
        })
    }
}

/// Architecture settings shared by every model of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    /// Neurons per continuous hidden layer (FDNN, FBNN).
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Points of each hidden-layer `s` grid.
    pub s_grid: usize,
    /// Basis size and order of every FBNN basis.
    pub n_basis: usize,
    pub order: usize,
    pub fdnn_init_gain: f64,
    pub fbnn_init_gain: f64,
    pub flm_n_basis: usize,
    pub flm_ridge: f64,
    pub fnn_functional_neurons: usize,
    pub fnn_hidden: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden: vec![4],
            activation: Activation::Tanh,
            s_grid: 50,
            n_basis: funcnet_core::fbnn::DEFAULT_N_BASIS,
            order: funcnet_core::fbnn::DEFAULT_ORDER,
            fdnn_init_gain: 1.0,
            fbnn_init_gain: 1.0,
            flm_n_basis: funcnet_core::fbnn::DEFAULT_N_BASIS,
            flm_ridge: funcnet_core::baselines::DEFAULT_FLM_RIDGE,
            fnn_functional_neurons: funcnet_core::baselines::DEFAULT_FNN_FUNCTIONAL_NEURONS,
            fnn_hidden: funcnet_core::baselines::DEFAULT_FNN_HIDDEN.to_vec(),
            mlp_hidden: funcnet_core::baselines::DEFAULT_MLP_HIDDEN.to_vec(),
        }
    }
}

/// Any fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Flm(FlmModel),
    Fdnn(FdnnModel),
    Fbnn(FbnnModel),
    Fnn(FnnModel),
    Mlp(MlpModel),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Flm(_) => ModelKind::Flm,
            FittedModel::Fdnn(_) => ModelKind::Fdnn,
            FittedModel::Fbnn(_) => ModelKind::Fbnn,
            FittedModel::Fnn(_) => ModelKind::Fnn,
            FittedModel::Mlp(_) => ModelKind::Mlp,
        }
    }
}

impl Predictor for FittedModel {
    fn predict(&self, data: &CurveSet) -> funcnet_core::Result<Vec<f64>> {
        match self {
            FittedModel::Flm(m) => m.predict(data),
            FittedModel::Fdnn(m) => m.predict(data),
            FittedModel::Fbnn(m) => m.predict(data),
            FittedModel::Fnn(m) => m.predict(data),
            FittedModel::Mlp(m) => m.predict(data),
        }
    }
}

/// Centering and scaling of a continuous response; models train on
/// `(y - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseScale {
    pub mean: f64,
    pub scale: f64,
}

impl ResponseScale {
    /// Mean and standard deviation of `y` over `idx`. A constant response keeps unit scale.
    pub fn fit(y: &[f64], idx: &[usize]) -> Self {
        let n = idx.len().max(1) as f64;
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            mean,
            scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    pub fn to_model(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn to_response(&self, v: f64) -> f64 {
        self.mean + self.scale * v
    }
}

/// A fitted model with what it needs to score new data.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: FittedModel,
    pub response_kind: ResponseKind,
    /// Pointwise predictor scaling estimated on the training rows.
    pub standardizer: Option<Standardizer>,
    pub response_scale: Option<ResponseScale>,
}

impl SavedModel {
    /// Predictions on the response scale (probabilities for binary models).
    ///
    /// FBNN models first project curves on other grids onto their input grid;
    /// every other network requires the training grid.
    pub fn predict(&self, data: &CurveSet) -> Result<Vec<f64>> {
        let projected;
        let data = match &self.model {
            FittedModel::Fbnn(m) => {
                projected = m.project_input(data)?;
                &projected
            }
            _ => data,
        };
        let raw = match &self.standardizer {
            Some(s) => self.model.predict(&s.apply(data)?)?,
            None => self.model.predict(data)?,
        };
        Ok(rescale(raw, self.response_scale))
    }
}

fn rescale(mut v: Vec<f64>, scale: Option<ResponseScale>) -> Vec<f64> {
    if let Some(r) = scale {
        v.iter_mut().for_each(|x| *x = r.to_response(*x));
    }
    v
}

/// A model scored in the units of the original response.
struct Rescaled<'a> {
    model: &'a FittedModel,
    scale: Option<ResponseScale>,
}

impl Predictor for Rescaled<'_> {
    fn predict(&self, data: &CurveSet) -> funcnet_core::Result<Vec<f64>> {
        Ok(rescale(self.model.predict(data)?, self.scale))
    }
}

/// Metrics and training history of one fit, as printed by `funcnet fit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub model: String,
    pub response_kind: String,
    pub n_samples: usize,
    pub grid_points: usize,
    pub parameter_count: usize,
    pub train: MetricsSummary,
    pub validation: Option<MetricsSummary>,
    pub test: Option<MetricsSummary>,
    pub epochs_run: Option<usize>,
    pub best_epoch: Option<usize>,
    pub stop_reason: Option<String>,
    pub final_lr: Option<f64>,
    /// Loss curves on the training scale of the response.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub split: SplitSummary,
    /// Seconds; not part of any deterministic output.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub rmse: f64,
    pub classification_error: Option<f64>,
    pub mean_log_likelihood: Option<f64>,
}

impl From<Metrics> for MetricsSummary {
    fn from(m: Metrics) -> Self {
        Self {
            n: m.n,
            rmse: m.rmse,
            classification_error: m.classification_error,
            mean_log_likelihood: m.mean_log_likelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Everything a fit needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub settings: ModelSettings,
    pub train: TrainConfig,
    pub standardize: bool,
    /// Center and scale continuous responses on the training rows.
    pub scale_response: bool,
}

fn output_activation(kind: ResponseKind) -> Activation {
    match kind {
        ResponseKind::Continuous => Activation::Linear,
        ResponseKind::Binary => Activation::Sigmoid,
    }
}

fn basis(n: usize, order: usize) -> Result<BsplineBasis> {
    BsplineBasis::uniform(n, order).map_err(|e| Error::Config(format!("bad basis: {e}")))
}

/// An untrained network of the requested shape.
fn init_network(spec: &ModelSpec, settings: &ModelSettings, data: &CurveSet, seed: u64) -> Result<FittedModel> {
    let grid: Arc<Grid> = data.grid().clone();
    let r = data.predictor_count();
    let out = output_activation(data.response_kind());
    let act = settings.activation;
    let hidden = spec.sizes.clone().unwrap_or_else(|| settings.hidden.clone());
    Ok(match spec.kind {
        ModelKind::Flm => unreachable!("the functional linear model is fitted directly"),
        ModelKind::Fdnn => {
            let s = Arc::new(Grid::uniform(settings.s_grid, 0.0, 1.0)?);
            let arch = hidden
                .iter()
                .fold(FdnnArch::new(r, grid, out), |a, &k| a.hidden_layer(k, s.clone(), act))
                .with_init_gain(settings.fdnn_init_gain);
            FittedModel::Fdnn(FdnnModel::init(&arch, seed)?)
        }
        ModelKind::Fbnn => {
            let s = Arc::new(Grid::uniform(settings.s_grid, 0.0, 1.0)?);
            let arch = hidden
                .iter()
                .fold(FbnnArch::new(r, grid, out), |a, &k| a.hidden_layer(k, s.clone(), act))
                .with_shared_basis(basis(settings.n_basis, settings.order)?)
                .with_init_gain(settings.fbnn_init_gain);
            FittedModel::Fbnn(FbnnModel::init(&arch, seed)?)
        }
        ModelKind::Fnn => {
            let (k, dense) = match &spec.sizes {
                Some(s) => (s[0], s[1..].to_vec()),
                None => (settings.fnn_functional_neurons, settings.fnn_hidden.clone()),
            };
            FittedModel::Fnn(FnnModel::init(grid, r, k, &dense, act, out, seed)?)
        }
        ModelKind::Mlp => {
            let h = spec.sizes.clone().unwrap_or_else(|| settings.mlp_hidden.clone());
            FittedModel::Mlp(MlpModel::init(grid, r, &h, act, out, seed)?)
        }
    })
}

fn train<M: Trainable>(model: &mut M, data: &CurveSet, split: &Split, cfg: &TrainConfig) -> Result<FitReport> {
    Ok(training::fit(model, data, split, cfg)?)
}

/// Splits `data` by the standard protocol, fits the model and evaluates it.
///
/// The split, the initial weights and the mini-batch order all derive from
/// `seed`. A third of the samples are held out for testing; when the model
/// stops early, half of the rest become the validation set.
pub fn fit_model(
    spec: &ModelSpec,
    protocol: &Protocol,
    data: &CurveSet,
    seed: u64,
) -> Result<(SavedModel, FitSummary)> {
    let start = Instant::now();
    let split = Split::standard(data.len(), spec.uses_validation(), seed)?;
    let standardizer = if protocol.standardize {
        Some(Standardizer::fit(data, split.train())?)
    } else {
        None
    };
    let scaled;
    let work = match &standardizer {
        Some(s) => {
            scaled = s.apply(data)?;
            &scaled
        }
        None => data,
    };
    let response_scale = (protocol.scale_response && data.response_kind() == ResponseKind::Continuous)
        .then(|| ResponseScale::fit(data.responses(), split.train()));
    let rescaled;
    let fit_data = match response_scale {
        Some(r) => {
            rescaled = work.with_responses(
                work.responses().iter().map(|&y| r.to_model(y)).collect(),
                ResponseKind::Continuous,
            )?;
            &rescaled
        }
        None => work,
    };
    let cfg = TrainConfig {
        early_stopping: spec.early_stopping,
        seed,
        ..protocol.train.clone()
    };
    let settings = &protocol.settings;
    let (model, report) = if spec.kind == ModelKind::Flm {
        let b = basis(settings.flm_n_basis, settings.order)?;
        (
            FittedModel::Flm(FlmModel::fit(fit_data, split.train(), b, settings.flm_ridge)?),
            None,
        )
    } else {
        let mut model = init_network(spec, settings, fit_data, seed)?;
        let report = match &mut model {
            FittedModel::Fdnn(m) => train(m, fit_data, &split, &cfg)?,
            FittedModel::Fbnn(m) => train(m, fit_data, &split, &cfg)?,
            FittedModel::Fnn(m) => train(m, fit_data, &split, &cfg)?,
            FittedModel::Mlp(m) => train(m, fit_data, &split, &cfg)?,
            FittedModel::Flm(_) => unreachable!(),
        };
        (model, Some(report))
    };
    let metrics = |idx: &[usize]| -> Result<Option<MetricsSummary>> {
        if idx.is_empty() {
            Ok(None)
        } else {
            let scored = Rescaled {
                model: &model,
                scale: response_scale,
            };
            Ok(Some(evaluate(&scored, work, idx)?.into()))
        }
    };
    let train_metrics = metrics(split.train())?.expect("the training set is never empty");
    let parameter_count = match &model {
        FittedModel::Flm(m) => m.parameter_count(),
        FittedModel::Fdnn(m) => m.parameter_count(),
        FittedModel::Fbnn(m) => m.parameter_count(),
        FittedModel::Fnn(m) => Trainable::parameter_count(m),
        FittedModel::Mlp(m) => Trainable::parameter_count(m),
    };
    let summary = FitSummary {
        model: spec.to_string(),
        response_kind: data.response_kind().to_string(),
        n_samples: data.len(),
        grid_points: data.grid().len(),
        parameter_count,
        train: train_metrics,
        validation: if spec.uses_validation() {
            metrics(split.val())?
        } else {
            None
        },
        test: metrics(split.test())?,
        epochs_run: report.as_ref().map(|r| r.epochs_run),
        best_epoch: report.as_ref().map(|r| r.best_epoch),
        stop_reason: report.as_ref().map(|r| r.stop_reason.name().to_string()),
        final_lr: report.as_ref().map(|r| r.final_lr),
        train_loss: report.as_ref().map(|r| r.train_loss.clone()).unwrap_or_default(),
        val_loss: report.as_ref().map(|r| r.val_loss.clone()).unwrap_or_default(),
        split: SplitSummary {
            train: split.train().to_vec(),
            validation: split.val().to_vec(),
            test: split.test().to_vec(),
        },
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let saved = SavedModel {
        model,
        response_kind: data.response_kind(),
        standardizer,
        response_scale,
    };
    Ok((saved, summary))
}
