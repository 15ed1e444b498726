//! Model files.
//!
//! A model file is one header line `funcnet-model <version> <kind>` followed
//! by a JSON document holding the response kind, the optional standardizer
//! and the model: grids (points and quadrature weights), bases (order and
//! interior knots), activations and every parameter array. Floats are printed
//! in shortest round-trip form and parsed exactly, so saving and loading
//! reproduces the model bit for bit.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use funcnet_core::activation::Activation;
use funcnet_core::baselines::{DenseLayer, DenseStack, FlmModel, FnnModel, Link, MlpModel};
use funcnet_core::bspline::BsplineBasis;
use funcnet_core::data::{ResponseKind, Standardizer};
use funcnet_core::fbnn::{FbnnLayer, FbnnModel, FbnnOutputLayer};
use funcnet_core::fdnn::{ContinuousLayer, FdnnModel, FunctionalOutputLayer};
use funcnet_core::grid::{BivariateGridFunction, Grid, GridFunction};
use funcnet_core::linalg::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{FittedModel, ModelKind, ResponseScale, SavedModel};

pub const MAGIC: &str = "funcnet-model";
pub const VERSION: u32 = 1;

type CoreResult<T> = funcnet_core::Result<T>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDto {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GridDto {
    fn from(g: &Grid) -> Self {
        Self {
            points: g.points().to_vec(),
            weights: g.weights().to_vec(),
        }
    }
    fn build(self) -> CoreResult<Arc<Grid>> {
        Ok(Arc::new(Grid::with_weights(self.points, self.weights)?))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixDto {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixDto {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }
    fn build(self) -> CoreResult<Matrix> {
        Matrix::from_vec(self.rows, self.cols, self.data)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisDto {
    order: usize,
    interior_knots: Vec<f64>,
}

impl BasisDto {
    fn from(b: &BsplineBasis) -> Self {
        let k = b.knots();
        Self {
            order: b.order(),
            interior_knots: k[b.order()..k.len() - b.order()].to_vec(),
        }
    }
    fn build(self) -> CoreResult<BsplineBasis> {
        BsplineBasis::with_interior_knots(self.order, self.interior_knots)
    }
}

fn activation(name: &str) -> CoreResult<Activation> {
    name.parse()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FdnnHiddenDto {
    in_grid: GridDto,
    out_grid: GridDto,
    j_in: usize,
    k_out: usize,
    activation: String,
    biases: Vec<Vec<f64>>,
    /// `k * j_in + j`, each `|s| × |t|`.
    weights: Vec<MatrixDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FdnnDto {
    input_count: usize,
    input_grid: GridDto,
    hidden: Vec<FdnnHiddenDto>,
    output_grid: GridDto,
    output_bias: f64,
    output_weights: Vec<Vec<f64>>,
    output_activation: String,
}

impl FdnnDto {
    fn from(m: &FdnnModel) -> Self {
        let hidden = m
            .hidden()
            .iter()
            .map(|l| FdnnHiddenDto {
                in_grid: GridDto::from(l.in_grid()),
                out_grid: GridDto::from(l.out_grid()),
                j_in: l.j_in(),
                k_out: l.k_out(),
                activation: l.activation().name().into(),
                biases: l.biases().iter().map(|b| b.values().to_vec()).collect(),
                weights: l.weights().iter().map(|w| MatrixDto::from(w.values())).collect(),
            })
            .collect();
        let out = m.output();
        Self {
            input_count: m.input_count(),
            input_grid: GridDto::from(m.input_grid()),
            hidden,
            output_grid: GridDto::from(out.in_grid()),
            output_bias: out.bias(),
            output_weights: out.weights().iter().map(|w| w.values().to_vec()).collect(),
            output_activation: out.activation().name().into(),
        }
    }

    fn build(self) -> CoreResult<FdnnModel> {
        let hidden = self
            .hidden
            .into_iter()
            .map(|l| {
                let (tg, sg) = (l.in_grid.build()?, l.out_grid.build()?);
                let biases = l
                    .biases
                    .into_iter()
                    .map(|b| GridFunction::new(sg.clone(), b))
                    .collect::<CoreResult<Vec<_>>>()?;
                let weights = l
                    .weights
                    .into_iter()
                    .map(|w| BivariateGridFunction::new(sg.clone(), tg.clone(), w.build()?))
                    .collect::<CoreResult<Vec<_>>>()?;
                ContinuousLayer::new(tg, sg, l.j_in, l.k_out, biases, weights, activation(&l.activation)?)
            })
            .collect::<CoreResult<Vec<_>>>()?;
        let og = self.output_grid.build()?;
        let weights = self
            .output_weights
            .into_iter()
            .map(|w| GridFunction::new(og.clone(), w))
            .collect::<CoreResult<Vec<_>>>()?;
        let output = FunctionalOutputLayer::new(og, self.output_bias, weights, activation(&self.output_activation)?)?;
        FdnnModel::from_layers(self.input_count, self.input_grid.build()?, hidden, output)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FbnnHiddenDto {
    in_grid: GridDto,
    out_grid: GridDto,
    j_in: usize,
    k_out: usize,
    activation: String,
    bias_basis: BasisDto,
    out_basis: BasisDto,
    in_basis: BasisDto,
    bias_coef: MatrixDto,
    /// `k * j_in + j`, each `C × D`.
    weight_coef: Vec<MatrixDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FbnnDto {
    input_count: usize,
    input_grid: GridDto,
    hidden: Vec<FbnnHiddenDto>,
    output_grid: GridDto,
    output_basis: BasisDto,
    output_bias: f64,
    output_coef: MatrixDto,
    output_activation: String,
}

impl FbnnDto {
    fn from(m: &FbnnModel) -> Self {
        let hidden = m
            .hidden()
            .iter()
            .map(|l| FbnnHiddenDto {
                in_grid: GridDto::from(l.in_grid()),
                out_grid: GridDto::from(l.out_grid()),
                j_in: l.j_in(),
                k_out: l.k_out(),
                activation: l.activation().name().into(),
                bias_basis: BasisDto::from(l.bias_basis()),
                out_basis: BasisDto::from(l.out_basis()),
                in_basis: BasisDto::from(l.in_basis()),
                bias_coef: MatrixDto::from(l.bias_coef()),
                weight_coef: l.weight_coefs().iter().map(MatrixDto::from).collect(),
            })
            .collect();
        let out = m.output();
        Self {
            input_count: m.input_count(),
            input_grid: GridDto::from(m.input_grid()),
            hidden,
            output_grid: GridDto::from(out.in_grid()),
            output_basis: BasisDto::from(out.in_basis()),
            output_bias: out.bias(),
            output_coef: MatrixDto::from(out.weight_coef()),
            output_activation: out.activation().name().into(),
        }
    }

    fn build(self) -> CoreResult<FbnnModel> {
        let hidden = self
            .hidden
            .into_iter()
            .map(|l| {
                let weight_coef = l
                    .weight_coef
                    .into_iter()
                    .map(MatrixDto::build)
                    .collect::<CoreResult<Vec<_>>>()?;
                FbnnLayer::new(
                    l.in_grid.build()?,
                    l.out_grid.build()?,
                    l.j_in,
                    l.k_out,
                    l.bias_basis.build()?,
                    l.out_basis.build()?,
                    l.in_basis.build()?,
                    l.bias_coef.build()?,
                    weight_coef,
                    activation(&l.activation)?,
                )
            })
            .collect::<CoreResult<Vec<_>>>()?;
        let output = FbnnOutputLayer::new(
            self.output_grid.build()?,
            self.output_basis.build()?,
            self.output_bias,
            self.output_coef.build()?,
            activation(&self.output_activation)?,
        )?;
        FbnnModel::from_layers(self.input_count, self.input_grid.build()?, hidden, output)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlmDto {
    basis: BasisDto,
    alpha: f64,
    beta_coef: MatrixDto,
    ridge: f64,
    link: String,
}

impl FlmDto {
    fn from(m: &FlmModel) -> Self {
        Self {
            basis: BasisDto::from(m.basis()),
            alpha: m.alpha(),
            beta_coef: MatrixDto::from(m.beta_coef()),
            ridge: m.ridge(),
            link: m.link().name().into(),
        }
    }

    fn build(self) -> CoreResult<FlmModel> {
        let link = match self.link.as_str() {
            "identity" => Link::Identity,
            "logistic" => Link::Logistic,
            other => {
                return Err(funcnet_core::Error::InvalidArgument(format!(
                    "unknown link '{other}' (expected identity, logistic)"
                )))
            }
        };
        FlmModel::from_parts(
            self.basis.build()?,
            self.alpha,
            self.beta_coef.build()?,
            self.ridge,
            link,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseDto {
    weights: MatrixDto,
    biases: Vec<f64>,
    activation: String,
}

fn dense_to(stack: &DenseStack) -> Vec<DenseDto> {
    stack
        .layers()
        .iter()
        .map(|l| DenseDto {
            weights: MatrixDto::from(l.weights()),
            biases: l.biases().to_vec(),
            activation: l.activation().name().into(),
        })
        .collect()
}

fn dense_from(layers: Vec<DenseDto>) -> CoreResult<DenseStack> {
    let layers = layers
        .into_iter()
        .map(|l| DenseLayer::new(l.weights.build()?, l.biases, activation(&l.activation)?))
        .collect::<CoreResult<Vec<_>>>()?;
    DenseStack::new(layers)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FnnDto {
    grid: GridDto,
    input_count: usize,
    biases: Vec<f64>,
    /// `k * input_count + r`.
    weights: Vec<Vec<f64>>,
    activation: String,
    dense: Vec<DenseDto>,
}

impl FnnDto {
    fn from(m: &FnnModel) -> Self {
        let weights = (0..m.functional_neurons())
            .flat_map(|k| (0..m.input_count()).map(move |r| (k, r)))
            .map(|(k, r)| m.weight(k, r).values().to_vec())
            .collect();
        Self {
            grid: GridDto::from(m.grid()),
            input_count: m.input_count(),
            biases: m.biases().to_vec(),
            weights,
            activation: m.activation().name().into(),
            dense: dense_to(m.dense()),
        }
    }

    fn build(self) -> CoreResult<FnnModel> {
        let grid = self.grid.build()?;
        let weights = self
            .weights
            .into_iter()
            .map(|w| GridFunction::new(grid.clone(), w))
            .collect::<CoreResult<Vec<_>>>()?;
        FnnModel::new(
            grid,
            self.input_count,
            self.biases,
            weights,
            activation(&self.activation)?,
            dense_from(self.dense)?,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDto {
    grid: GridDto,
    input_count: usize,
    dense: Vec<DenseDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizerDto {
    means: Vec<Vec<f64>>,
    scales: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseScaleDto {
    mean: f64,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Body<M> {
    response_kind: String,
    standardizer: Option<StandardizerDto>,
    #[serde(default)]
    response_scale: Option<ResponseScaleDto>,
    model: M,
}

fn body<M: Serialize>(saved: &SavedModel, model: M) -> serde_json::Result<String> {
    serde_json::to_string(&Body {
        response_kind: saved.response_kind.name().into(),
        standardizer: saved.standardizer.as_ref().map(|s| StandardizerDto {
            means: s.means().to_vec(),
            scales: s.scales().to_vec(),
        }),
        response_scale: saved.response_scale.map(|r| ResponseScaleDto {
            mean: r.mean,
            scale: r.scale,
        }),
        model,
    })
}

/// The complete file text.
pub fn to_string(saved: &SavedModel) -> String {
    let json = match &saved.model {
        FittedModel::Flm(m) => body(saved, FlmDto::from(m)),
        FittedModel::Fdnn(m) => body(saved, FdnnDto::from(m)),
        FittedModel::Fbnn(m) => body(saved, FbnnDto::from(m)),
        FittedModel::Fnn(m) => body(saved, FnnDto::from(m)),
        FittedModel::Mlp(m) => body(
            saved,
            MlpDto {
                grid: GridDto::from(m.grid()),
                input_count: m.input_count(),
                dense: dense_to(m.dense()),
            },
        ),
    }
    .expect("model parameters are finite and serialize");
    format!("{MAGIC} {VERSION} {}\n{json}\n", saved.model.kind())
}

fn decode<M: for<'de> Deserialize<'de>>(json: &str, origin: &str) -> Result<Body<M>> {
    serde_json::from_str(json).map_err(|e| Error::Parse {
        origin: origin.to_string(),
        row: e.line() + 1,
        column: e.column(),
        message: e.to_string(),
    })
}

fn finish<M>(body: Body<M>, build: impl FnOnce(M) -> CoreResult<FittedModel>, origin: &str) -> Result<SavedModel> {
    let response_kind: ResponseKind = body.response_kind.parse()?;
    let standardizer = body
        .standardizer
        .map(|s| Standardizer::from_parts(s.means, s.scales))
        .transpose()?;
    let response_scale = match body.response_scale {
        Some(r) if !(r.mean.is_finite() && r.scale.is_finite() && r.scale > 0.0) => {
            return Err(Error::Format(format!(
                "{origin}: response scale must be finite and positive"
            )));
        }
        Some(r) => Some(ResponseScale {
            mean: r.mean,
            scale: r.scale,
        }),
        None => None,
    };
    let model = build(body.model).map_err(|e| Error::Format(format!("{origin}: inconsistent model: {e}")))?;
    Ok(SavedModel {
        model,
        response_kind,
        standardizer,
        response_scale,
    })
}

/// Parses file text; `origin` names it in diagnostics.
pub fn from_str(text: &str, origin: &str) -> Result<SavedModel> {
    let (header, json) = text.split_once('\n').unwrap_or((text, ""));
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || {
        Error::Format(format!(
            "{origin}: not a model file (expected '{MAGIC} {VERSION} <kind>' on the first line)"
        ))
    };
    let [magic, version, kind] = fields[..] else {
        return Err(bad_header());
    };
    if magic != MAGIC {
        return Err(bad_header());
    }
    if version != VERSION.to_string() {
        return Err(Error::Format(format!(
            "{origin}: unsupported model file version {version} (this build reads {VERSION})"
        )));
    }
    let kind: ModelKind = kind
        .parse()
        .map_err(|_| Error::Format(format!("{origin}: unknown model kind '{kind}'")))?;
    match kind {
        ModelKind::Flm => finish(
            decode::<FlmDto>(json, origin)?,
            |m| Ok(FittedModel::Flm(m.build()?)),
            origin,
        ),
        ModelKind::Fdnn => finish(
            decode::<FdnnDto>(json, origin)?,
            |m| Ok(FittedModel::Fdnn(m.build()?)),
            origin,
        ),
        ModelKind::Fbnn => finish(
            decode::<FbnnDto>(json, origin)?,
            |m| Ok(FittedModel::Fbnn(m.build()?)),
            origin,
        ),
        ModelKind::Fnn => finish(
            decode::<FnnDto>(json, origin)?,
            |m| Ok(FittedModel::Fnn(m.build()?)),
            origin,
        ),
        ModelKind::Mlp => finish(
            decode::<MlpDto>(json, origin)?,
            |m| {
                Ok(FittedModel::Mlp(MlpModel::new(
                    m.grid.build()?,
                    m.input_count,
                    dense_from(m.dense)?,
                )?))
            },
            origin,
        ),
    }
}

pub fn save(path: &Path, saved: &SavedModel) -> Result<()> {
    fs::write(path, to_string(saved)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SavedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, &path.display().to_string())
}
