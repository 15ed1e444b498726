//! Run configuration: TOML file, then command-line overrides.
//!
//! Every key has a default, so an empty file (or none) is a valid
//! configuration. Unknown keys are rejected. Precedence is flags over file
//! over defaults.

use std::fs;
use std::path::{Path, PathBuf};

use funcnet_core::activation::Activation;
use funcnet_core::simulate::{MaternParams, Scenario};
use funcnet_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::benchmark::{parse_scenario, BenchmarkPlan};
use crate::dataset::ResponseChoice;
use crate::error::{Error, Result};
use crate::models::{ModelSettings, ModelSpec, Protocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed; replication `r` of a benchmark uses `seed + r`.
    pub seed: u64,
    pub reps: usize,
    /// Output file (simulate, fit, predict) or directory (benchmark).
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Scenario label for `simulate`, e.g. `quadratic` or `logistic-cam`.
    pub scenario: String,
    pub n: usize,
    pub m: usize,
    pub noise_sd: f64,
    pub rho: f64,
    pub sigma2: f64,
    /// How `fit` reads the response column of a CSV file.
    pub response: ResponseChoice,
    /// Center and scale predictor curves pointwise on the training rows.
    pub standardize: bool,
    /// Center and scale a continuous response on the training rows.
    pub scale_response: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Model for `fit`, in the same syntax as benchmark models.
    pub kind: String,
    /// Neurons of each continuous hidden layer (FDNN, FBNN).
    pub hidden: Vec<usize>,
    pub activation: String,
    pub s_grid: usize,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub lr_growth: f64,
    pub max_epochs: usize,
    /// `0` trains on the full batch.
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub halve_on_increase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub scenarios: Vec<String>,
    pub models: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            reps: 10,
            out: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            benchmark: BenchmarkSection::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scenario: "linear".into(),
            n: 1500,
            m: 200,
            noise_sd: 1.0,
            rho: 0.5,
            sigma2: 1.0,
            response: ResponseChoice::Auto,
            standardize: false,
            scale_response: true,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = ModelSettings::default();
        Self {
            kind: "fdnn".into(),
            hidden: s.hidden,
            activation: s.activation.name().into(),
            s_grid: s.s_grid,
            n_basis: s.n_basis,
            order: s.order,
            fdnn_init_gain: PROTOCOL_FDNN_INIT_GAIN,
            fbnn_init_gain: PROTOCOL_FBNN_INIT_GAIN,
            flm_n_basis: s.flm_n_basis,
            flm_ridge: s.flm_ridge,
            fnn_functional_neurons: s.fnn_functional_neurons,
            fnn_hidden: s.fnn_hidden,
            mlp_hidden: s.mlp_hidden,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            lr_growth: PROTOCOL_LR_GROWTH,
            max_epochs: t.max_epochs,
            batch_size: 0,
            patience: PROTOCOL_PATIENCE,
            min_delta: t.min_delta,
            halve_on_increase: t.halve_on_increase,
        }
    }
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            scenarios: vec!["linear".into()],
            models: vec!["flm".into(), "fdnn".into(), "fbnn".into()],
        }
    }
}

/// Benchmark-protocol training defaults; the library defaults are more conservative.
pub const PROTOCOL_FDNN_INIT_GAIN: f64 = 5.0;
pub const PROTOCOL_FBNN_INIT_GAIN: f64 = 10.0;
pub const PROTOCOL_LR_GROWTH: f64 = 1.05;
pub const PROTOCOL_PATIENCE: usize = 100;

/// Overrides from the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    /// Comma-separated model list.
    pub model: Option<String>,
    /// Comma-separated scenario list.
    pub scenario: Option<String>,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

/// Splits a model list on the commas between specs, not those inside `(…)`.
fn split_models(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out.into_iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Flags win over file values. `--model` and `--scenario` set both the
    /// single-run keys and the benchmark lists.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.reps {
            self.reps = r;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(m) = &o.model {
            let list = split_models(m);
            if let Some(first) = list.first() {
                self.model.kind = first.clone();
            }
            self.benchmark.models = list;
        }
        if let Some(s) = &o.scenario {
            let list = split_list(s);
            if let Some(first) = list.first() {
                self.data.scenario = first.clone();
            }
            self.benchmark.scenarios = list;
        }
    }

    pub fn matern(&self) -> Result<MaternParams> {
        MaternParams::new(self.data.rho, self.data.sigma2).map_err(|e| Error::Config(e.to_string()))
    }

    /// The scenario for `simulate`, with the configured noise level.
    pub fn scenario(&self) -> Result<Scenario> {
        Ok(with_noise(parse_scenario(&self.data.scenario)?, self.data.noise_sd))
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.kind.parse()
    }

    pub fn protocol(&self) -> Result<Protocol> {
        let m = &self.model;
        let activation: Activation = m
            .activation
            .parse()
            .map_err(|e: funcnet_core::Error| Error::Config(e.to_string()))?;
        if m.hidden.is_empty() || m.hidden.contains(&0) {
            return Err(Error::Config(
                "model.hidden needs at least one layer, each with at least one neuron".into(),
            ));
        }
        if m.s_grid < 2 {
            return Err(Error::Config(format!(
                "model.s_grid must be at least 2, got {}",
                m.s_grid
            )));
        }
        let settings = ModelSettings {
            hidden: m.hidden.clone(),
            activation,
            s_grid: m.s_grid,
            n_basis: m.n_basis,
            order: m.order,
            fdnn_init_gain: m.fdnn_init_gain,
            fbnn_init_gain: m.fbnn_init_gain,
            flm_n_basis: m.flm_n_basis,
            flm_ridge: m.flm_ridge,
            fnn_functional_neurons: m.fnn_functional_neurons,
            fnn_hidden: m.fnn_hidden.clone(),
            mlp_hidden: m.mlp_hidden.clone(),
        };
        let t = &self.train;
        let train = TrainConfig {
            lr: t.lr,
            max_epochs: t.max_epochs,
            batch_size: (t.batch_size > 0).then_some(t.batch_size),
            patience: t.patience,
            min_delta: t.min_delta,
            seed: self.seed,
            early_stopping: true,
            halve_on_increase: t.halve_on_increase,
            lr_growth: t.lr_growth,
        };
        train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        Ok(Protocol {
            settings,
            train,
            standardize: self.data.standardize,
            scale_response: self.data.scale_response,
        })
    }

    pub fn benchmark_plan(&self) -> Result<BenchmarkPlan> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        let scenarios = self
            .benchmark
            .scenarios
            .iter()
            .map(|s| Ok(with_noise(parse_scenario(s)?, self.data.noise_sd)))
            .collect::<Result<Vec<_>>>()?;
        let models = self
            .benchmark
            .models
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<ModelSpec>>>()?;
        if scenarios.is_empty() || models.is_empty() {
            return Err(Error::Config(
                "benchmark needs at least one scenario and one model".into(),
            ));
        }
        Ok(BenchmarkPlan {
            scenarios,
            models,
            reps: self.reps,
            base_seed: self.seed,
            n: self.data.n,
            m: self.data.m,
            matern: self.matern()?,
            protocol: self.protocol()?,
        })
    }
}

fn with_noise(s: Scenario, noise_sd: f64) -> Scenario {
    match s.response_kind {
        funcnet_core::data::ResponseKind::Continuous => s.with_noise_sd(noise_sd),
        funcnet_core::data::ResponseKind::Binary => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", "x").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n", "run.toml").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("learning_rate")), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::from_toml("seed = 3\nreps = 4\n[benchmark]\nmodels = [\"flm\"]\n", "x").unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            model: Some("fbnn(4,4),fdnn:no-es".into()),
            ..Default::default()
        });
        assert_eq!((c.seed, c.reps), (9, 4));
        assert_eq!(c.benchmark.models, vec!["fbnn(4,4)", "fdnn:no-es"]);
        assert_eq!(c.model.kind, "fbnn(4,4)");
    }

    #[test]
    fn zero_reps_is_a_config_error() {
        let c = RunConfig {
            reps: 0,
            ..Default::default()
        };
        assert!(matches!(c.benchmark_plan(), Err(Error::Config(_))));
    }
}
