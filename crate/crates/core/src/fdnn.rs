//! Functional direct neural network.
//!
//! Hidden layers map functions to functions:
//!
//! ```text
//! H⁽ˡ⁾ₖ(s) = σ( bₖ(s) + Σⱼ ∫ wⱼₖ(s, t) H⁽ˡ⁻¹⁾ⱼ(t) dt )
//! ```
//!
//! and a functional output neuron reduces the last layer to a scalar,
//! `ŷ = σ(b + Σⱼ ∫ wⱼ(t) H⁽ᴸ⁾ⱼ(t) dt)`. Bias functions and weight surfaces are
//! stored by their values on the layer grids, and every integral is the
//! trapezoidal sum of its grid.
//!
//! Gradients are functional: `∂L/∂w(s, t)` is the pointwise density of the
//! derivative, without quadrature weights. A pointwise update `w ← w − lr·g`
//! is therefore steepest descent in the quadrature-weighted function space.
//! The exact partial derivative with respect to a stored grid value is the
//! functional gradient times the quadrature weights of its point, see
//! [`FdnnGradients::to_partials`].
//!
//! All passes are batched: activations of neuron `k` are a `B × m` matrix
//! with one row per sample, so each integral operator is one matrix product.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};

use crate::activation::Activation;
use crate::data::CurveSet;
use crate::error::{invalid, numeric, Result};
use crate::grid::{ensure_same_grid, BivariateGridFunction, Grid, GridFunction};
use crate::linalg::{gemm, Matrix};
use crate::math;
use crate::model::{Predictor, Trainable};
use crate::rng::{self, streams};

/// Size, grid and activation of one continuous hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayerSpec {
    pub neurons: usize,
    pub grid: Arc<Grid>,
    pub activation: Activation,
}

/// Architecture of an FDNN.
#[derive(Debug, Clone, PartialEq)]
pub struct FdnnArch {
    pub input_count: usize,
    pub input_grid: Arc<Grid>,
    pub hidden: Vec<HiddenLayerSpec>,
    pub output_activation: Activation,
    /// Multiplies every initialization bound; `1.0` is the standard scheme.
    pub init_gain: f64,
}

impl FdnnArch {
    pub fn new(input_count: usize, input_grid: Arc<Grid>, output_activation: Activation) -> Self {
        Self {
            input_count,
            input_grid,
            hidden: Vec::new(),
            output_activation,
            init_gain: 1.0,
        }
    }

    pub fn with_init_gain(mut self, gain: f64) -> Self {
        self.init_gain = gain;
        self
    }

    pub fn hidden_layer(mut self, neurons: usize, grid: Arc<Grid>, activation: Activation) -> Self {
        self.hidden.push(HiddenLayerSpec {
            neurons,
            grid,
            activation,
        });
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.input_count == 0 {
            return Err(invalid!("an FDNN needs at least one input curve"));
        }
        if let Some(i) = self.hidden.iter().position(|h| h.neurons == 0) {
            return Err(invalid!("hidden layer {i} has no neurons"));
        }
        if !(self.init_gain > 0.0) || !self.init_gain.is_finite() {
            return Err(invalid!(
                "init gain must be positive and finite, got {}",
                self.init_gain
            ));
        }
        Ok(())
    }
}

/// Continuous hidden layer with `k_out` neurons fed by `j_in` functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLayer {
    in_grid: Arc<Grid>,
    out_grid: Arc<Grid>,
    j_in: usize,
    k_out: usize,
    biases: Vec<GridFunction>,
    /// Surface from input `j` to neuron `k` at index `k * j_in + j`.
    weights: Vec<BivariateGridFunction>,
    activation: Activation,
}

impl ContinuousLayer {
    pub fn new(
        in_grid: Arc<Grid>,
        out_grid: Arc<Grid>,
        j_in: usize,
        k_out: usize,
        biases: Vec<GridFunction>,
        weights: Vec<BivariateGridFunction>,
        activation: Activation,
    ) -> Result<Self> {
        if j_in == 0 || k_out == 0 {
            return Err(invalid!("continuous layer needs j_in, k_out >= 1"));
        }
        if biases.len() != k_out {
            return Err(invalid!("expected {k_out} bias functions, got {}", biases.len()));
        }
        if weights.len() != k_out * j_in {
            return Err(invalid!(
                "expected {} weight surfaces, got {}",
                k_out * j_in,
                weights.len()
            ));
        }
        for b in &biases {
            ensure_same_grid(&out_grid, b.grid(), "bias function")?;
        }
        for w in &weights {
            ensure_same_grid(&out_grid, w.out_grid(), "weight surface (s axis)")?;
            ensure_same_grid(&in_grid, w.in_grid(), "weight surface (t axis)")?;
        }
        Ok(Self {
            in_grid,
            out_grid,
            j_in,
            k_out,
            biases,
            weights,
            activation,
        })
    }

    pub fn zeros(
        in_grid: Arc<Grid>,
        out_grid: Arc<Grid>,
        j_in: usize,
        k_out: usize,
        activation: Activation,
    ) -> Result<Self> {
        let biases = (0..k_out).map(|_| GridFunction::zeros(out_grid.clone())).collect();
        let weights = (0..k_out * j_in)
            .map(|_| BivariateGridFunction::zeros(out_grid.clone(), in_grid.clone()))
            .collect();
        Self::new(in_grid, out_grid, j_in, k_out, biases, weights, activation)
    }

    pub fn in_grid(&self) -> &Arc<Grid> {
        &self.in_grid
    }
    pub fn out_grid(&self) -> &Arc<Grid> {
        &self.out_grid
    }
    pub fn j_in(&self) -> usize {
        self.j_in
    }
    pub fn k_out(&self) -> usize {
        self.k_out
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn biases(&self) -> &[GridFunction] {
        &self.biases
    }
    pub fn weights(&self) -> &[BivariateGridFunction] {
        &self.weights
    }

    pub fn bias(&self, k: usize) -> &GridFunction {
        &self.biases[k]
    }

    pub fn weight(&self, j: usize, k: usize) -> &BivariateGridFunction {
        &self.weights[k * self.j_in + j]
    }

    pub fn parameter_count(&self) -> usize {
        self.k_out * self.out_grid.len() * (1 + self.j_in * self.in_grid.len())
    }

    /// Pre-activations and activations of every neuron, `B × |out_grid|` each.
    fn forward(&self, inputs: &[Matrix]) -> (Vec<Matrix>, Vec<Matrix>) {
        let batch = inputs[0].rows();
        let q = self.in_grid.weights();
        let mut pre = Vec::with_capacity(self.k_out);
        let mut post = Vec::with_capacity(self.k_out);
        for k in 0..self.k_out {
            let mut z = Matrix::zeros(batch, self.out_grid.len());
            for (j, h) in inputs.iter().enumerate() {
                let mut wq = self.weight(j, k).values().clone();
                wq.scale_columns(q);
                gemm(1.0, h, false, &wq, true, 1.0, &mut z);
            }
            let b = self.biases[k].values();
            for i in 0..batch {
                for (v, bv) in z.row_mut(i).iter_mut().zip(b) {
                    *v += bv;
                }
            }
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            pre.push(z);
            post.push(a);
        }
        (pre, post)
    }
}

/// Functional output neuron `ŷ = σ(b + Σⱼ ∫ wⱼ(t) Hⱼ(t) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalOutputLayer {
    in_grid: Arc<Grid>,
    j_in: usize,
    bias: f64,
    weights: Vec<GridFunction>,
    activation: Activation,
}

impl FunctionalOutputLayer {
    pub fn new(in_grid: Arc<Grid>, bias: f64, weights: Vec<GridFunction>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid!("output layer needs at least one weight function"));
        }
        if !bias.is_finite() {
            return Err(invalid!("output bias must be finite"));
        }
        for w in &weights {
            ensure_same_grid(&in_grid, w.grid(), "output weight function")?;
        }
        Ok(Self {
            in_grid,
            j_in: weights.len(),
            bias,
            weights,
            activation,
        })
    }

    pub fn zeros(in_grid: Arc<Grid>, j_in: usize, activation: Activation) -> Result<Self> {
        let weights = (0..j_in).map(|_| GridFunction::zeros(in_grid.clone())).collect();
        Self::new(in_grid, 0.0, weights, activation)
    }

    pub fn in_grid(&self) -> &Arc<Grid> {
        &self.in_grid
    }
    pub fn j_in(&self) -> usize {
        self.j_in
    }
    pub fn bias(&self) -> f64 {
        self.bias
    }
    pub fn weights(&self) -> &[GridFunction] {
        &self.weights
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn parameter_count(&self) -> usize {
        1 + self.j_in * self.in_grid.len()
    }

    fn pre_activation(&self, inputs: &[Matrix]) -> Vec<f64> {
        let batch = inputs[0].rows();
        let q = self.in_grid.weights();
        let mut z = vec![self.bias; batch];
        for (h, w) in inputs.iter().zip(&self.weights) {
            let wq: Vec<f64> = w.values().iter().zip(q).map(|(a, b)| a * b).collect();
            for (zi, hi) in z.iter_mut().zip(h.mul_vec(&wq)) {
                *zi += hi;
            }
        }
        z
    }
}

/// A complete FDNN.
#[derive(Debug, Clone, PartialEq)]
pub struct FdnnModel {
    input_count: usize,
    input_grid: Arc<Grid>,
    hidden: Vec<ContinuousLayer>,
    output: FunctionalOutputLayer,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct FdnnCache {
    inputs: Vec<Matrix>,
    hidden_pre: Vec<Vec<Matrix>>,
    hidden_post: Vec<Vec<Matrix>>,
    output_pre: Vec<f64>,
    predictions: Vec<f64>,
}

impl FdnnCache {
    pub fn batch_size(&self) -> usize {
        self.predictions.len()
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn output_pre_activation(&self) -> &[f64] {
        &self.output_pre
    }

    /// Pre-activations of hidden layer `l`, one matrix per neuron.
    pub fn hidden_pre_activation(&self, l: usize) -> &[Matrix] {
        &self.hidden_pre[l]
    }

    /// Activations of hidden layer `l`, one matrix per neuron.
    pub fn hidden_activation(&self, l: usize) -> &[Matrix] {
        &self.hidden_post[l]
    }

    fn layer_input(&self, l: usize) -> &[Matrix] {
        if l == 0 {
            &self.inputs
        } else {
            &self.hidden_post[l - 1]
        }
    }

    fn last_activations(&self) -> &[Matrix] {
        self.hidden_post.last().map_or(&self.inputs[..], |v| &v[..])
    }
}

/// Functional gradient of one continuous layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLayerGradients {
    /// `∂L/∂bₖ(s)` per neuron.
    pub biases: Vec<Vec<f64>>,
    /// `∂L/∂wⱼₖ(s, t)` at index `k * j_in + j`.
    pub weights: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayerGradients {
    pub bias: f64,
    /// `∂L/∂wⱼ(t)` per input function.
    pub weights: Vec<Vec<f64>>,
}

/// Gradients shaped like the parameters of an [`FdnnModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdnnGradients {
    pub hidden: Vec<ContinuousLayerGradients>,
    pub output: OutputLayerGradients,
}

impl FdnnGradients {
    /// Exact partial derivatives with respect to the stored grid values:
    /// every functional gradient multiplied by the quadrature weights of its point.
    pub fn to_partials(&self, model: &FdnnModel) -> FdnnGradients {
        let hidden = self
            .hidden
            .iter()
            .zip(&model.hidden)
            .map(|(g, layer)| {
                let qs = layer.out_grid.weights();
                let qt = layer.in_grid.weights();
                ContinuousLayerGradients {
                    biases: g
                        .biases
                        .iter()
                        .map(|b| b.iter().zip(qs).map(|(v, q)| v * q).collect())
                        .collect(),
                    weights: g
                        .weights
                        .iter()
                        .map(|w| {
                            let mut out = w.clone();
                            out.scale_columns(qt);
                            for (i, q) in qs.iter().enumerate() {
                                out.row_mut(i).iter_mut().for_each(|v| *v *= q);
                            }
                            out
                        })
                        .collect(),
                }
            })
            .collect();
        let qo = model.output.in_grid.weights();
        let output = OutputLayerGradients {
            bias: self.output.bias,
            weights: self
                .output
                .weights
                .iter()
                .map(|w| w.iter().zip(qo).map(|(v, q)| v * q).collect())
                .collect(),
        };
        FdnnGradients { hidden, output }
    }

    /// Flattened in the order of [`FdnnModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            for b in &layer.biases {
                out.extend_from_slice(b);
            }
            for w in &layer.weights {
                out.extend_from_slice(w.as_slice());
            }
        }
        for w in &self.output.weights {
            out.extend_from_slice(w);
        }
        out.push(self.output.bias);
        out
    }

    fn check_finite(&self) -> Result<()> {
        for (l, layer) in self.hidden.iter().enumerate() {
            if layer.biases.iter().flatten().any(|v| !v.is_finite()) {
                return Err(numeric!("non-finite gradient in hidden layer {} bias functions", l + 1));
            }
            if layer.weights.iter().any(|w| !w.is_finite()) {
                return Err(numeric!(
                    "non-finite gradient in hidden layer {} weight surfaces",
                    l + 1
                ));
            }
        }
        if !self.output.bias.is_finite() || self.output.weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(numeric!("non-finite gradient in the output layer"));
        }
        Ok(())
    }
}

impl FdnnModel {
    /// Assembles a model from explicit layers, checking that they chain.
    pub fn from_layers(
        input_count: usize,
        input_grid: Arc<Grid>,
        hidden: Vec<ContinuousLayer>,
        output: FunctionalOutputLayer,
    ) -> Result<Self> {
        if input_count == 0 {
            return Err(invalid!("an FDNN needs at least one input curve"));
        }
        let mut width = input_count;
        let mut grid = input_grid.clone();
        for (l, layer) in hidden.iter().enumerate() {
            if layer.j_in != width {
                return Err(invalid!(
                    "hidden layer {} expects {} inputs but the previous layer provides {width}",
                    l + 1,
                    layer.j_in
                ));
            }
            ensure_same_grid(&grid, &layer.in_grid, "hidden layer input")?;
            width = layer.k_out;
            grid = layer.out_grid.clone();
        }
        if output.j_in != width {
            return Err(invalid!(
                "output layer expects {} inputs but the last layer provides {width}",
                output.j_in
            ));
        }
        ensure_same_grid(&grid, &output.in_grid, "output layer input")?;
        Ok(Self {
            input_count,
            input_grid,
            hidden,
            output,
        })
    }

    /// All-zero parameters.
    pub fn zeros(arch: &FdnnArch) -> Result<Self> {
        arch.validate()?;
        let mut hidden = Vec::new();
        let mut width = arch.input_count;
        let mut grid = arch.input_grid.clone();
        for spec in &arch.hidden {
            hidden.push(ContinuousLayer::zeros(
                grid.clone(),
                spec.grid.clone(),
                width,
                spec.neurons,
                spec.activation,
            )?);
            width = spec.neurons;
            grid = spec.grid.clone();
        }
        let output = FunctionalOutputLayer::zeros(grid, width, arch.output_activation)?;
        Self::from_layers(arch.input_count, arch.input_grid.clone(), hidden, output)
    }

    /// Random initialization, deterministic in `seed`.
    ///
    /// Weight values are i.i.d. uniform on `[−a, a]` with
    /// `a = √(6 / (J·|T| + K)) / |T|`, where `|T|` is the length of the
    /// integration domain (`|in_grid| × mean quadrature weight`), `J` the
    /// incoming and `K` the outgoing width, all times `arch.init_gain`.
    /// Biases start at zero.
    pub fn init(arch: &FdnnArch, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = rng::stream(seed, streams::INIT);
        let bound = |j: usize, k: usize, grid: &Grid| {
            let measure = grid.weights().iter().sum::<f64>();
            arch.init_gain * math::sqrt(6.0 / (j as f64 * measure + k as f64)) / measure
        };
        for layer in &mut model.hidden {
            let a = bound(layer.j_in, layer.k_out, &layer.in_grid);
            let dist = Uniform::new_inclusive(-a, a).map_err(|e| invalid!("bad init bound: {e}"))?;
            for w in &mut layer.weights {
                w.values_mut()
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = dist.sample(&mut rng));
            }
        }
        let a = bound(model.output.j_in, 1, &model.output.in_grid);
        let dist = Uniform::new_inclusive(-a, a).map_err(|e| invalid!("bad init bound: {e}"))?;
        for w in &mut model.output.weights {
            w.values_mut().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        }
        Ok(model)
    }

    pub fn input_count(&self) -> usize {
        self.input_count
    }
    pub fn input_grid(&self) -> &Arc<Grid> {
        &self.input_grid
    }
    pub fn hidden(&self) -> &[ContinuousLayer] {
        &self.hidden
    }
    pub fn output(&self) -> &FunctionalOutputLayer {
        &self.output
    }

    /// Batched forward pass over `R` input matrices (`B × |input_grid|` each).
    pub fn forward_matrices(&self, inputs: Vec<Matrix>) -> Result<FdnnCache> {
        if inputs.len() != self.input_count {
            return Err(invalid!(
                "model expects {} input curves, got {}",
                self.input_count,
                inputs.len()
            ));
        }
        let batch = inputs[0].rows();
        if inputs
            .iter()
            .any(|x| x.rows() != batch || x.cols() != self.input_grid.len())
        {
            return Err(invalid!(
                "inputs must be {batch}x{} matrices on the model's input grid",
                self.input_grid.len()
            ));
        }
        let mut hidden_pre = Vec::with_capacity(self.hidden.len());
        let mut hidden_post: Vec<Vec<Matrix>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let input = hidden_post.last().map_or(&inputs[..], |v| &v[..]);
            let (pre, post) = layer.forward(input);
            hidden_pre.push(pre);
            hidden_post.push(post);
        }
        let last = hidden_post.last().map_or(&inputs[..], |v| &v[..]);
        let output_pre = self.output.pre_activation(last);
        let predictions = output_pre.iter().map(|&z| self.output.activation.apply(z)).collect();
        Ok(FdnnCache {
            inputs,
            hidden_pre,
            hidden_post,
            output_pre,
            predictions,
        })
    }

    /// Forward pass for one sample; `x[r]` is predictor `r`.
    pub fn forward(&self, x: &[GridFunction]) -> Result<(f64, FdnnCache)> {
        let inputs = x
            .iter()
            .map(|f| {
                ensure_same_grid(&self.input_grid, f.grid(), "FDNN input")?;
                Matrix::from_vec(1, f.values().len(), f.values().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let cache = self.forward_matrices(inputs)?;
        Ok((cache.predictions[0], cache))
    }

    /// Backward pass for a single-sample cache.
    pub fn backward(&self, cache: &FdnnCache, dl_dyhat: f64) -> Result<FdnnGradients> {
        self.backward_matrices(cache, &[dl_dyhat])
    }

    /// Reverse pass: gradients summed over the cached batch.
    ///
    /// With `G = δ ⊙ σ′(pre)` for the adjoint `δₖ(s) = ∂L/∂Hₖ(s)`, the layer
    /// gradients are `∂L/∂bₖ = Gₖ` and `∂L/∂wⱼₖ(s, t) = Gₖ(s) Hⱼ(t)`, and the
    /// adjoint of the layer input is `δⱼ(t) = Σₖ ∫ Gₖ(s) wⱼₖ(s, t) ds`.
    pub fn backward_matrices(&self, cache: &FdnnCache, dl_dyhat: &[f64]) -> Result<FdnnGradients> {
        let batch = cache.batch_size();
        if dl_dyhat.len() != batch
            || cache.hidden_pre.len() != self.hidden.len()
            || cache.inputs.len() != self.input_count
        {
            return Err(invalid!("cache does not match this model or the loss gradient length"));
        }
        for (layer, pre) in self.hidden.iter().zip(&cache.hidden_pre) {
            if pre.len() != layer.k_out
                || pre
                    .iter()
                    .any(|p| p.rows() != batch || p.cols() != layer.out_grid.len())
            {
                return Err(invalid!("cache does not match this model"));
            }
        }

        // Output layer.
        let dpre: Vec<f64> = dl_dyhat
            .iter()
            .zip(cache.output_pre.iter().zip(&cache.predictions))
            .map(|(d, (&z, &h))| d * self.output.activation.derivative_from(z, h))
            .collect();
        let last = cache.last_activations();
        let output = OutputLayerGradients {
            bias: dpre.iter().sum(),
            weights: last.iter().map(|h| h.tr_mul_vec(&dpre)).collect(),
        };
        // δ for the last hidden layer: dpre_b · w_j(t).
        let mut delta: Vec<Matrix> = self
            .output
            .weights
            .iter()
            .map(|w| Matrix::from_fn(batch, w.values().len(), |b, t| dpre[b] * w.values()[t]))
            .collect();

        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let pre = &cache.hidden_pre[l];
            let post = &cache.hidden_post[l];
            let input = cache.layer_input(l);
            let g: Vec<Matrix> = delta
                .iter()
                .zip(pre.iter().zip(post))
                .map(|(d, (z, h))| {
                    let mut g = d.clone();
                    for ((gv, zv), hv) in g.as_mut_slice().iter_mut().zip(z.as_slice()).zip(h.as_slice()) {
                        *gv *= layer.activation.derivative_from(*zv, *hv);
                    }
                    g
                })
                .collect();
            let biases = g.iter().map(|gk| gk.column_sums()).collect();
            let mut weights = Vec::with_capacity(layer.k_out * layer.j_in);
            for gk in &g {
                for h in input {
                    weights.push(gk.matmul(true, h, false));
                }
            }
            if l > 0 {
                let qs = layer.out_grid.weights();
                let mut next: Vec<Matrix> = (0..layer.j_in)
                    .map(|_| Matrix::zeros(batch, layer.in_grid.len()))
                    .collect();
                for (k, gk) in g.iter().enumerate() {
                    let mut gq = gk.clone();
                    gq.scale_columns(qs);
                    for (j, nj) in next.iter_mut().enumerate() {
                        gemm(1.0, &gq, false, layer.weight(j, k).values(), false, 1.0, nj);
                    }
                }
                delta = next;
            }
            hidden_grads.push(ContinuousLayerGradients { biases, weights });
        }
        hidden_grads.reverse();
        Ok(FdnnGradients {
            hidden: hidden_grads,
            output,
        })
    }

    /// Pointwise gradient step `p(·) ← p(·) − lr·g(·)`.
    pub fn grad_step(&mut self, grads: &FdnnGradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(invalid!("learning rate must be a nonnegative finite number, got {lr}"));
        }
        if grads.hidden.len() != self.hidden.len()
            || grads.output.weights.len() != self.output.j_in
            || grads.hidden.iter().zip(&self.hidden).any(|(g, l)| {
                g.biases.len() != l.k_out
                    || g.weights.len() != l.weights.len()
                    || g.biases.iter().any(|b| b.len() != l.out_grid.len())
                    || g.weights
                        .iter()
                        .any(|w| w.rows() != l.out_grid.len() || w.cols() != l.in_grid.len())
            })
            || grads
                .output
                .weights
                .iter()
                .any(|w| w.len() != self.output.in_grid.len())
        {
            return Err(invalid!("gradients do not match the model shape"));
        }
        grads.check_finite()?;
        for (layer, g) in self.hidden.iter_mut().zip(&grads.hidden) {
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                for (v, d) in b.values_mut().iter_mut().zip(gb) {
                    *v -= lr * d;
                }
            }
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                w.values_mut().axpy(-lr, gw);
            }
        }
        self.output.bias -= lr * grads.output.bias;
        for (w, gw) in self.output.weights.iter_mut().zip(&grads.output.weights) {
            for (v, d) in w.values_mut().iter_mut().zip(gw) {
                *v -= lr * d;
            }
        }
        Ok(())
    }

    /// Stored values flattened: per hidden layer the bias functions then the
    /// weight surfaces (row-major), then output weights and the output bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.hidden {
            for b in &layer.biases {
                out.extend_from_slice(b.values());
            }
            for w in &layer.weights {
                out.extend_from_slice(w.values().as_slice());
            }
        }
        for w in &self.output.weights {
            out.extend_from_slice(w.values());
        }
        out.push(self.output.bias);
        out
    }

    /// Inverse of [`FdnnModel::parameters`].
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(invalid!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            ));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("parameters must be finite"));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.hidden {
            for b in &mut layer.biases {
                b.values_mut().iter_mut().for_each(|v| *v = it.next().unwrap());
            }
            for w in &mut layer.weights {
                w.values_mut()
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = it.next().unwrap());
            }
        }
        for w in &mut self.output.weights {
            w.values_mut().iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        self.output.bias = it.next().unwrap();
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden.iter().map(ContinuousLayer::parameter_count).sum::<usize>() + self.output.parameter_count()
    }

    fn inputs_from(&self, data: &CurveSet) -> Result<Vec<Matrix>> {
        ensure_same_grid(&self.input_grid, data.grid(), "FDNN input")?;
        if data.predictor_count() != self.input_count {
            return Err(invalid!(
                "model expects {} predictors, data has {}",
                self.input_count,
                data.predictor_count()
            ));
        }
        Ok(data.predictors().to_vec())
    }
}

impl Predictor for FdnnModel {
    fn predict(&self, data: &CurveSet) -> Result<Vec<f64>> {
        Ok(self.forward_matrices(self.inputs_from(data)?)?.predictions)
    }
}

impl Trainable for FdnnModel {
    type Cache = FdnnCache;
    type Gradients = FdnnGradients;

    fn forward_batch(&self, data: &CurveSet) -> Result<(Vec<f64>, FdnnCache)> {
        let cache = self.forward_matrices(self.inputs_from(data)?)?;
        Ok((cache.predictions.clone(), cache))
    }

    fn backward_batch(&self, cache: &FdnnCache, dl_dyhat: &[f64]) -> Result<FdnnGradients> {
        self.backward_matrices(cache, dl_dyhat)
    }

    fn apply_gradients(&mut self, grads: &FdnnGradients, lr: f64) -> Result<()> {
        self.grad_step(grads, lr)
    }

    fn parameter_count(&self) -> usize {
        FdnnModel::parameter_count(self)
    }

    fn parameters(&self) -> Vec<f64> {
        FdnnModel::parameters(self)
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        FdnnModel::set_parameters(self, params)
    }

    fn gradient_vector(&self, grads: &FdnnGradients) -> Vec<f64> {
        grads.to_partials(self).flatten()
    }
}
