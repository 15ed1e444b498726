//! Functional basis neural network.
//!
//! Same topology as [`crate::fdnn`], but every bias function and weight
//! surface is a B-spline expansion:
//!
//! ```text
//! bₖ(s)     = Σ_b Bₖ,b v*_b(s)
//! wⱼₖ(s, t) = Σ_c Σ_d Wⱼₖ,cd v_c(s) v_d(t)
//! ```
//!
//! so a layer only needs the basis moments `Aⱼ,d = ∫ v_d(t) Hⱼ(t) dt` of its
//! inputs. Training updates the coefficients; the gradients here are exact
//! partial derivatives with respect to them. Basis design matrices on the
//! layer grids are computed once at construction.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};

use crate::activation::Activation;
use crate::bspline::BsplineBasis;
use crate::data::CurveSet;
use crate::error::{invalid, numeric, Result};
use crate::fdnn::{ContinuousLayer, FdnnModel, FunctionalOutputLayer};
use crate::grid::{ensure_same_grid, BivariateGridFunction, Grid, GridFunction};
use crate::linalg::{cholesky, cholesky_solve, gemm, solve_spd, Matrix};
use crate::math;
use crate::model::{Predictor, Trainable};
use crate::rng::{self, streams};

/// Basis size used when none is given.
pub const DEFAULT_N_BASIS: usize = 7;
/// Cubic splines.
pub const DEFAULT_ORDER: usize = 4;

fn default_basis() -> BsplineBasis {
    BsplineBasis::uniform(DEFAULT_N_BASIS, DEFAULT_ORDER).expect("default basis is valid")
}

/// One hidden layer of an [`FbnnArch`].
#[derive(Debug, Clone, PartialEq)]
pub struct FbnnLayerSpec {
    pub neurons: usize,
    pub grid: Arc<Grid>,
    pub activation: Activation,
    /// Expansion of the bias functions on `s` (`B` functions).
    pub bias_basis: BsplineBasis,
    /// Expansion of the weight surfaces along `s` (`C` functions).
    pub out_basis: BsplineBasis,
    /// Expansion of the weight surfaces along `t` (`D` functions).
    pub in_basis: BsplineBasis,
}

/// Architecture of an FBNN.
#[derive(Debug, Clone, PartialEq)]
pub struct FbnnArch {
    pub input_count: usize,
    pub input_grid: Arc<Grid>,
    pub hidden: Vec<FbnnLayerSpec>,
    pub output_basis: BsplineBasis,
    pub output_activation: Activation,
    /// Multiplies every initialization bound; `1.0` is the standard scheme.
    pub init_gain: f64,
}

impl FbnnArch {
    /// No hidden layers yet; the output basis is the default cubic basis.
    pub fn new(input_count: usize, input_grid: Arc<Grid>, output_activation: Activation) -> Self {
        Self {
            input_count,
            input_grid,
            hidden: Vec::new(),
            output_basis: default_basis(),
            output_activation,
            init_gain: 1.0,
        }
    }

    pub fn with_init_gain(mut self, gain: f64) -> Self {
        self.init_gain = gain;
        self
    }

    /// Appends a hidden layer using the default basis for `v*`, `v(s)` and `v(t)`.
    pub fn hidden_layer(self, neurons: usize, grid: Arc<Grid>, activation: Activation) -> Self {
        self.hidden_layer_with_bases(
            neurons,
            grid,
            activation,
            default_basis(),
            default_basis(),
            default_basis(),
        )
    }

    pub fn hidden_layer_with_bases(
        mut self,
        neurons: usize,
        grid: Arc<Grid>,
        activation: Activation,
        bias_basis: BsplineBasis,
        out_basis: BsplineBasis,
        in_basis: BsplineBasis,
    ) -> Self {
        self.hidden.push(FbnnLayerSpec {
            neurons,
            grid,
            activation,
            bias_basis,
            out_basis,
            in_basis,
        });
        self
    }

    pub fn with_output_basis(mut self, basis: BsplineBasis) -> Self {
        self.output_basis = basis;
        self
    }

    /// Replaces every basis in the architecture by `basis`.
    pub fn with_shared_basis(mut self, basis: BsplineBasis) -> Self {
        for h in &mut self.hidden {
            h.bias_basis = basis.clone();
            h.out_basis = basis.clone();
            h.in_basis = basis.clone();
        }
        self.output_basis = basis;
        self
    }
}

/// Hidden layer with coefficient parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FbnnLayer {
    in_grid: Arc<Grid>,
    out_grid: Arc<Grid>,
    j_in: usize,
    k_out: usize,
    bias_basis: BsplineBasis,
    out_basis: BsplineBasis,
    in_basis: BsplineBasis,
    /// `k_out × B`.
    bias_coef: Matrix,
    /// `C × D` coefficients for input `j` and neuron `k` at index `k * j_in + j`.
    weight_coef: Vec<Matrix>,
    activation: Activation,
    /// `v*` on the out grid, `|out_grid| × B`.
    bias_design: Matrix,
    /// `v` on the out grid, `|out_grid| × C`.
    out_design: Matrix,
    /// `v` on the in grid, `|in_grid| × D`.
    in_design: Matrix,
    /// `in_design` with rows scaled by the in-grid quadrature weights.
    in_design_q: Matrix,
}

fn weighted_rows(design: &Matrix, q: &[f64]) -> Matrix {
    let mut out = design.clone();
    for (i, w) in q.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= w);
    }
    out
}

/// Inverse of the quadrature Gram matrix `VᵀQV` of a basis design.
fn gram_inverse(design: &Matrix, q: &[f64]) -> Result<Matrix> {
    let g = design.matmul(true, &weighted_rows(design, q), false);
    let l = cholesky(&g)?;
    let n = g.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = alloc::vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let col = cholesky_solve(&l, &e);
        e[i] = 0.0;
        for (r, v) in col.into_iter().enumerate() {
            inv.set(r, i, v);
        }
    }
    Ok(inv)
}

impl FbnnLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_grid: Arc<Grid>,
        out_grid: Arc<Grid>,
        j_in: usize,
        k_out: usize,
        bias_basis: BsplineBasis,
        out_basis: BsplineBasis,
        in_basis: BsplineBasis,
        bias_coef: Matrix,
        weight_coef: Vec<Matrix>,
        activation: Activation,
    ) -> Result<Self> {
        if j_in == 0 || k_out == 0 {
            return Err(invalid!("FBNN layer needs j_in, k_out >= 1"));
        }
        let (b, c, d) = (bias_basis.n_basis(), out_basis.n_basis(), in_basis.n_basis());
        if bias_coef.rows() != k_out || bias_coef.cols() != b {
            return Err(invalid!(
                "bias coefficients are {}x{}, expected {k_out}x{b}",
                bias_coef.rows(),
                bias_coef.cols()
            ));
        }
        if weight_coef.len() != k_out * j_in {
            return Err(invalid!(
                "expected {} weight coefficient blocks, got {}",
                k_out * j_in,
                weight_coef.len()
            ));
        }
        if let Some(w) = weight_coef.iter().find(|w| w.rows() != c || w.cols() != d) {
            return Err(invalid!(
                "weight coefficient block is {}x{}, expected {c}x{d} (out basis x in basis)",
                w.rows(),
                w.cols()
            ));
        }
        if !bias_coef.is_finite() || weight_coef.iter().any(|w| !w.is_finite()) {
            return Err(invalid!("coefficients must be finite"));
        }
        let bias_design = bias_basis.design(&out_grid)?;
        let out_design = out_basis.design(&out_grid)?;
        let in_design = in_basis.design(&in_grid)?;
        let in_design_q = weighted_rows(&in_design, in_grid.weights());
        Ok(Self {
            in_grid,
            out_grid,
            j_in,
            k_out,
            bias_basis,
            out_basis,
            in_basis,
            bias_coef,
            weight_coef,
            activation,
            bias_design,
            out_design,
            in_design,
            in_design_q,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn zeros(
        in_grid: Arc<Grid>,
        out_grid: Arc<Grid>,
        j_in: usize,
        k_out: usize,
        bias_basis: BsplineBasis,
        out_basis: BsplineBasis,
        in_basis: BsplineBasis,
        activation: Activation,
    ) -> Result<Self> {
        let bias_coef = Matrix::zeros(k_out, bias_basis.n_basis());
        let weight_coef = (0..k_out * j_in)
            .map(|_| Matrix::zeros(out_basis.n_basis(), in_basis.n_basis()))
            .collect();
        Self::new(
            in_grid,
            out_grid,
            j_in,
            k_out,
            bias_basis,
            out_basis,
            in_basis,
            bias_coef,
            weight_coef,
            activation,
        )
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
    pub fn bias_basis(&self) -> &BsplineBasis {
        &self.bias_basis
    }
    pub fn out_basis(&self) -> &BsplineBasis {
        &self.out_basis
    }
    pub fn in_basis(&self) -> &BsplineBasis {
        &self.in_basis
    }
    pub fn bias_coef(&self) -> &Matrix {
        &self.bias_coef
    }
    pub fn weight_coefs(&self) -> &[Matrix] {
        &self.weight_coef
    }

    pub fn weight_coef(&self, j: usize, k: usize) -> &Matrix {
        &self.weight_coef[k * self.j_in + j]
    }

    pub fn parameter_count(&self) -> usize {
        self.bias_coef.as_slice().len() + self.weight_coef.iter().map(|w| w.as_slice().len()).sum::<usize>()
    }

    /// `w(s, t) = Σ_{c,d} W_cd v_c(s) v_d(t)` on `out_grid × in_grid`.
    pub fn reconstruct_weight(&self, j: usize, k: usize) -> Result<BivariateGridFunction> {
        if j >= self.j_in || k >= self.k_out {
            return Err(invalid!(
                "weight index (j={j}, k={k}) out of range for a {}x{} layer",
                self.j_in,
                self.k_out
            ));
        }
        let vw = self.out_design.matmul(false, self.weight_coef(j, k), false);
        let values = vw.matmul(false, &self.in_design, true);
        BivariateGridFunction::new(self.out_grid.clone(), self.in_grid.clone(), values)
    }

    /// `bₖ(s) = Σ_b Bₖ,b v*_b(s)` on `out_grid`.
    pub fn reconstruct_bias(&self, k: usize) -> Result<GridFunction> {
        if k >= self.k_out {
            return Err(invalid!("bias index {k} out of range for {} neurons", self.k_out));
        }
        GridFunction::new(self.out_grid.clone(), self.bias_design.mul_vec(self.bias_coef.row(k)))
    }

    fn bias_functions(&self) -> Matrix {
        self.bias_coef.matmul(false, &self.bias_design, true)
    }

    fn forward(&self, inputs: &[Matrix]) -> (Vec<Matrix>, Vec<Matrix>, Vec<Matrix>) {
        let batch = inputs[0].rows();
        let a: Vec<Matrix> = inputs
            .iter()
            .map(|h| h.matmul(false, &self.in_design_q, false))
            .collect();
        let bias = self.bias_functions();
        let mut pre = Vec::with_capacity(self.k_out);
        let mut post = Vec::with_capacity(self.k_out);
        for k in 0..self.k_out {
            let mut u = Matrix::zeros(batch, self.out_basis.n_basis());
            for (j, aj) in a.iter().enumerate() {
                gemm(1.0, aj, false, self.weight_coef(j, k), true, 1.0, &mut u);
            }
            let mut z = u.matmul(false, &self.out_design, true);
            let bk = bias.row(k);
            for i in 0..batch {
                for (v, b) in z.row_mut(i).iter_mut().zip(bk) {
                    *v += b;
                }
            }
            let mut h = z.clone();
            h.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            pre.push(z);
            post.push(h);
        }
        (a, pre, post)
    }
}

/// Functional output neuron with coefficient weights, `ŷ = σ(b + Σⱼ Σ_c Wⱼ,c Aⱼ,c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbnnOutputLayer {
    in_grid: Arc<Grid>,
    j_in: usize,
    in_basis: BsplineBasis,
    bias: f64,
    /// `j_in × C`.
    weight_coef: Matrix,
    activation: Activation,
    in_design: Matrix,
    in_design_q: Matrix,
}

impl FbnnOutputLayer {
    pub fn new(
        in_grid: Arc<Grid>,
        in_basis: BsplineBasis,
        bias: f64,
        weight_coef: Matrix,
        activation: Activation,
    ) -> Result<Self> {
        let c = in_basis.n_basis();
        if weight_coef.rows() == 0 || weight_coef.cols() != c {
            return Err(invalid!(
                "output coefficients are {}x{}, expected j_in x {c}",
                weight_coef.rows(),
                weight_coef.cols()
            ));
        }
        if !bias.is_finite() || !weight_coef.is_finite() {
            return Err(invalid!("coefficients must be finite"));
        }
        let in_design = in_basis.design(&in_grid)?;
        let in_design_q = weighted_rows(&in_design, in_grid.weights());
        Ok(Self {
            in_grid,
            j_in: weight_coef.rows(),
            in_basis,
            bias,
            weight_coef,
            activation,
            in_design,
            in_design_q,
        })
    }

    pub fn zeros(in_grid: Arc<Grid>, j_in: usize, in_basis: BsplineBasis, activation: Activation) -> Result<Self> {
        let w = Matrix::zeros(j_in, in_basis.n_basis());
        Self::new(in_grid, in_basis, 0.0, w, activation)
    }

    pub fn in_grid(&self) -> &Arc<Grid> {
        &self.in_grid
    }
    pub fn j_in(&self) -> usize {
        self.j_in
    }
    pub fn in_basis(&self) -> &BsplineBasis {
        &self.in_basis
    }
    pub fn bias(&self) -> f64 {
        self.bias
    }
    pub fn weight_coef(&self) -> &Matrix {
        &self.weight_coef
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn parameter_count(&self) -> usize {
        1 + self.weight_coef.as_slice().len()
    }

    /// `wⱼ(t) = Σ_c Wⱼ,c v_c(t)` on `in_grid`.
    pub fn reconstruct_weight(&self, j: usize) -> Result<GridFunction> {
        if j >= self.j_in {
            return Err(invalid!(
                "output weight index {j} out of range for {} inputs",
                self.j_in
            ));
        }
        GridFunction::new(self.in_grid.clone(), self.in_design.mul_vec(self.weight_coef.row(j)))
    }
}

/// A complete FBNN.
#[derive(Debug, Clone, PartialEq)]
pub struct FbnnModel {
    input_count: usize,
    input_grid: Arc<Grid>,
    hidden: Vec<FbnnLayer>,
    output: FbnnOutputLayer,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct FbnnCache {
    /// Basis moments of each hidden layer's inputs, `B × D` per input function.
    hidden_a: Vec<Vec<Matrix>>,
    hidden_pre: Vec<Vec<Matrix>>,
    hidden_post: Vec<Vec<Matrix>>,
    /// Basis moments of the output layer's inputs, `B × C` per input function.
    output_a: Vec<Matrix>,
    output_pre: Vec<f64>,
    predictions: Vec<f64>,
}

impl FbnnCache {
    pub fn batch_size(&self) -> usize {
        self.predictions.len()
    }
    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }
    pub fn output_pre_activation(&self) -> &[f64] {
        &self.output_pre
    }
    /// `Aⱼ,d` of hidden layer `l`, one `batch × D` matrix per input function.
    pub fn hidden_moments(&self, l: usize) -> &[Matrix] {
        &self.hidden_a[l]
    }
    pub fn hidden_activation(&self, l: usize) -> &[Matrix] {
        &self.hidden_post[l]
    }
    /// `Aⱼ,c` of the output layer.
    pub fn output_moments(&self) -> &[Matrix] {
        &self.output_a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbnnLayerGradients {
    /// `k_out × B`.
    pub bias: Matrix,
    /// `C × D` at index `k * j_in + j`.
    pub weights: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbnnOutputGradients {
    pub bias: f64,
    /// `j_in × C`.
    pub weights: Matrix,
}

/// Partial derivatives with respect to every coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct FbnnGradients {
    pub hidden: Vec<FbnnLayerGradients>,
    pub output: FbnnOutputGradients,
}

impl FbnnGradients {
    /// Flattened in the order of [`FbnnModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.extend_from_slice(l.bias.as_slice());
            for w in &l.weights {
                out.extend_from_slice(w.as_slice());
            }
        }
        out.extend_from_slice(self.output.weights.as_slice());
        out.push(self.output.bias);
        out
    }

    fn check_finite(&self) -> Result<()> {
        for (l, g) in self.hidden.iter().enumerate() {
            if !g.bias.is_finite() {
                return Err(numeric!(
                    "non-finite gradient in hidden layer {} bias coefficients",
                    l + 1
                ));
            }
            if g.weights.iter().any(|w| !w.is_finite()) {
                return Err(numeric!(
                    "non-finite gradient in hidden layer {} weight coefficients",
                    l + 1
                ));
            }
        }
        if !self.output.bias.is_finite() || !self.output.weights.is_finite() {
            return Err(numeric!("non-finite gradient in the output layer"));
        }
        Ok(())
    }
}

impl FbnnModel {
    pub fn from_layers(
        input_count: usize,
        input_grid: Arc<Grid>,
        hidden: Vec<FbnnLayer>,
        output: FbnnOutputLayer,
    ) -> Result<Self> {
        if input_count == 0 {
            return Err(invalid!("an FBNN needs at least one input curve"));
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

    pub fn zeros(arch: &FbnnArch) -> Result<Self> {
        if arch.input_count == 0 {
            return Err(invalid!("an FBNN needs at least one input curve"));
        }
        let mut hidden = Vec::new();
        let mut width = arch.input_count;
        let mut grid = arch.input_grid.clone();
        for (l, spec) in arch.hidden.iter().enumerate() {
            if spec.neurons == 0 {
                return Err(invalid!("hidden layer {} has no neurons", l + 1));
            }
            hidden.push(FbnnLayer::zeros(
                grid.clone(),
                spec.grid.clone(),
                width,
                spec.neurons,
                spec.bias_basis.clone(),
                spec.out_basis.clone(),
                spec.in_basis.clone(),
                spec.activation,
            )?);
            width = spec.neurons;
            grid = spec.grid.clone();
        }
        let output = FbnnOutputLayer::zeros(grid, width, arch.output_basis.clone(), arch.output_activation)?;
        Self::from_layers(arch.input_count, arch.input_grid.clone(), hidden, output)
    }

    /// Weight coefficients i.i.d. uniform on `(−1, 1)·gain / √(J·D)`; biases zero.
    pub fn init(arch: &FbnnArch, seed: u64) -> Result<Self> {
        if !(arch.init_gain > 0.0) || !arch.init_gain.is_finite() {
            return Err(invalid!(
                "init gain must be positive and finite, got {}",
                arch.init_gain
            ));
        }
        let mut model = Self::zeros(arch)?;
        let mut rng = rng::stream(seed, streams::INIT);
        let dist = |j: usize, d: usize| {
            let a = arch.init_gain / math::sqrt((j * d) as f64);
            Uniform::new(-a, a).map_err(|e| invalid!("bad init bound: {e}"))
        };
        for layer in &mut model.hidden {
            let u = dist(layer.j_in, layer.in_basis.n_basis())?;
            for w in &mut layer.weight_coef {
                w.as_mut_slice().iter_mut().for_each(|v| *v = u.sample(&mut rng));
            }
        }
        let u = dist(model.output.j_in, model.output.in_basis.n_basis())?;
        model
            .output
            .weight_coef
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = u.sample(&mut rng));
        Ok(model)
    }

    pub fn input_count(&self) -> usize {
        self.input_count
    }
    pub fn input_grid(&self) -> &Arc<Grid> {
        &self.input_grid
    }
    pub fn hidden(&self) -> &[FbnnLayer] {
        &self.hidden
    }
    pub fn output(&self) -> &FbnnOutputLayer {
        &self.output
    }

    /// The basis through which inputs enter the network.
    pub fn input_basis(&self) -> &BsplineBasis {
        self.hidden.first().map_or(&self.output.in_basis, |l| &l.in_basis)
    }

    pub fn forward_matrices(&self, inputs: Vec<Matrix>) -> Result<FbnnCache> {
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
        let mut hidden_a = Vec::with_capacity(self.hidden.len());
        let mut hidden_pre = Vec::with_capacity(self.hidden.len());
        let mut hidden_post: Vec<Vec<Matrix>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let input = hidden_post.last().map_or(&inputs[..], |v| &v[..]);
            let (a, pre, post) = layer.forward(input);
            hidden_a.push(a);
            hidden_pre.push(pre);
            hidden_post.push(post);
        }
        let last = hidden_post.last().map_or(&inputs[..], |v| &v[..]);
        let output_a: Vec<Matrix> = last
            .iter()
            .map(|h| h.matmul(false, &self.output.in_design_q, false))
            .collect();
        let mut output_pre = alloc::vec![self.output.bias; batch];
        for (j, a) in output_a.iter().enumerate() {
            for (z, v) in output_pre.iter_mut().zip(a.mul_vec(self.output.weight_coef.row(j))) {
                *z += v;
            }
        }
        let predictions = output_pre.iter().map(|&z| self.output.activation.apply(z)).collect();
        Ok(FbnnCache {
            hidden_a,
            hidden_pre,
            hidden_post,
            output_a,
            output_pre,
            predictions,
        })
    }

    /// Forward pass for one sample on the model grid.
    pub fn forward(&self, x: &[GridFunction]) -> Result<(f64, FbnnCache)> {
        let inputs = x
            .iter()
            .map(|f| {
                ensure_same_grid(&self.input_grid, f.grid(), "FBNN input")?;
                Matrix::from_vec(1, f.values().len(), f.values().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let cache = self.forward_matrices(inputs)?;
        Ok((cache.predictions[0], cache))
    }

    pub fn backward(&self, cache: &FbnnCache, dl_dyhat: f64) -> Result<FbnnGradients> {
        self.backward_matrices(cache, &[dl_dyhat])
    }

    /// Reverse pass with gradients summed over the cached batch.
    ///
    /// Adjoints here are partial derivatives with respect to grid values. For
    /// a layer with `Gₖ = δₖ ⊙ σ′(preₖ)` and `Pₖ = Gₖ V_s`:
    /// `∂L/∂Bₖ = 1ᵀGₖ V*`, `∂L/∂Wⱼₖ = Pₖᵀ Aⱼ`, and the input adjoint is
    /// `(Σₖ Pₖ Wⱼₖ) (diag(q) V_t)ᵀ`.
    pub fn backward_matrices(&self, cache: &FbnnCache, dl_dyhat: &[f64]) -> Result<FbnnGradients> {
        let batch = cache.batch_size();
        if dl_dyhat.len() != batch
            || cache.hidden_pre.len() != self.hidden.len()
            || cache.output_a.len() != self.output.j_in
        {
            return Err(invalid!("cache does not match this model or the loss gradient length"));
        }
        for (layer, (pre, a)) in self.hidden.iter().zip(cache.hidden_pre.iter().zip(&cache.hidden_a)) {
            if pre.len() != layer.k_out
                || a.len() != layer.j_in
                || pre
                    .iter()
                    .any(|p| p.rows() != batch || p.cols() != layer.out_grid.len())
                || a.iter().any(|m| m.cols() != layer.in_basis.n_basis())
            {
                return Err(invalid!("cache does not match this model"));
            }
        }
        if cache
            .output_a
            .iter()
            .any(|m| m.rows() != batch || m.cols() != self.output.in_basis.n_basis())
        {
            return Err(invalid!("cache does not match this model"));
        }

        let dpre: Vec<f64> = dl_dyhat
            .iter()
            .zip(cache.output_pre.iter().zip(&cache.predictions))
            .map(|(d, (&z, &h))| d * self.output.activation.derivative_from(z, h))
            .collect();
        let c_out = self.output.in_basis.n_basis();
        let mut out_w = Matrix::zeros(self.output.j_in, c_out);
        for (j, a) in cache.output_a.iter().enumerate() {
            out_w.row_mut(j).copy_from_slice(&a.tr_mul_vec(&dpre));
        }
        let output = FbnnOutputGradients {
            bias: dpre.iter().sum(),
            weights: out_w,
        };

        // ∂L/∂Hⱼ(t_i) = dpre · (diag(q) V W_j)_i
        let mut delta: Vec<Matrix> = (0..self.output.j_in)
            .map(|j| {
                let vq = self.output.in_design_q.mul_vec(self.output.weight_coef.row(j));
                Matrix::from_fn(batch, vq.len(), |b, t| dpre[b] * vq[t])
            })
            .collect();

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let pre = &cache.hidden_pre[l];
            let post = &cache.hidden_post[l];
            let a = &cache.hidden_a[l];
            let mut bias = Matrix::zeros(layer.k_out, layer.bias_basis.n_basis());
            let mut weights = Vec::with_capacity(layer.k_out * layer.j_in);
            let mut da: Vec<Matrix> = (0..layer.j_in)
                .map(|_| Matrix::zeros(batch, layer.in_basis.n_basis()))
                .collect();
            for (k, ((dk, zk), hk)) in delta.iter().zip(pre).zip(post).enumerate() {
                let mut g = dk.clone();
                for ((gv, zv), hv) in g.as_mut_slice().iter_mut().zip(zk.as_slice()).zip(hk.as_slice()) {
                    *gv *= layer.activation.derivative_from(*zv, *hv);
                }
                let gb = layer.bias_design.tr_mul_vec(&g.column_sums());
                bias.row_mut(k).copy_from_slice(&gb);
                let p = g.matmul(false, &layer.out_design, false);
                for (j, aj) in a.iter().enumerate() {
                    weights.push(p.matmul(true, aj, false));
                    if l > 0 {
                        gemm(1.0, &p, false, layer.weight_coef(j, k), false, 1.0, &mut da[j]);
                    }
                }
            }
            if l > 0 {
                delta = da.iter().map(|d| d.matmul(false, &layer.in_design_q, true)).collect();
            }
            hidden.push(FbnnLayerGradients { bias, weights });
        }
        hidden.reverse();
        Ok(FbnnGradients { hidden, output })
    }

    /// `θ ← θ − lr·∂L/∂θ` on every coefficient.
    pub fn grad_step(&mut self, grads: &FbnnGradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(invalid!("learning rate must be a nonnegative finite number, got {lr}"));
        }
        let shapes_ok = grads.hidden.len() == self.hidden.len()
            && grads.hidden.iter().zip(&self.hidden).all(|(g, l)| {
                g.bias.rows() == l.bias_coef.rows()
                    && g.bias.cols() == l.bias_coef.cols()
                    && g.weights.len() == l.weight_coef.len()
                    && g.weights
                        .iter()
                        .zip(&l.weight_coef)
                        .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            })
            && grads.output.weights.rows() == self.output.weight_coef.rows()
            && grads.output.weights.cols() == self.output.weight_coef.cols();
        if !shapes_ok {
            return Err(invalid!("gradients do not match the model shape"));
        }
        grads.check_finite()?;
        for (layer, g) in self.hidden.iter_mut().zip(&grads.hidden) {
            layer.bias_coef.axpy(-lr, &g.bias);
            for (w, gw) in layer.weight_coef.iter_mut().zip(&g.weights) {
                w.axpy(-lr, gw);
            }
        }
        self.output.bias -= lr * grads.output.bias;
        self.output.weight_coef.axpy(-lr, &grads.output.weights);
        Ok(())
    }

    /// Steepest descent in the L2 metric of the represented functions: each
    /// coefficient gradient is multiplied by the inverse Gram matrices of its
    /// bases, the basis counterpart of the FDNN functional gradient.
    pub fn functional_step(&mut self, grads: &FbnnGradients, lr: f64) -> Result<()> {
        let mut pre = grads.clone();
        for (layer, g) in self.hidden.iter().zip(&mut pre.hidden) {
            let q_out = layer.out_grid.weights();
            let gb = gram_inverse(&layer.bias_design, q_out)?;
            let gs = gram_inverse(&layer.out_design, q_out)?;
            let gt = gram_inverse(&layer.in_design, layer.in_grid.weights())?;
            g.bias = g.bias.matmul(false, &gb, false);
            for w in &mut g.weights {
                *w = gs.matmul(false, &w.matmul(false, &gt, false), false);
            }
        }
        let go = gram_inverse(&self.output.in_design, self.output.in_grid.weights())?;
        pre.output.weights = pre.output.weights.matmul(false, &go, false);
        self.grad_step(&pre, lr)
    }

    /// Per hidden layer the bias coefficients then the weight blocks (row-major),
    /// then the output coefficients and the output bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.hidden {
            out.extend_from_slice(l.bias_coef.as_slice());
            for w in &l.weight_coef {
                out.extend_from_slice(w.as_slice());
            }
        }
        out.extend_from_slice(self.output.weight_coef.as_slice());
        out.push(self.output.bias);
        out
    }

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
        for l in &mut self.hidden {
            l.bias_coef
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = it.next().unwrap());
            for w in &mut l.weight_coef {
                w.as_mut_slice().iter_mut().for_each(|v| *v = it.next().unwrap());
            }
        }
        self.output
            .weight_coef
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = it.next().unwrap());
        self.output.bias = it.next().unwrap();
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden.iter().map(FbnnLayer::parameter_count).sum::<usize>() + self.output.parameter_count()
    }

    /// The FDNN whose bias functions and weight surfaces are the basis
    /// reconstructions of this model's coefficients.
    pub fn to_fdnn(&self) -> Result<FdnnModel> {
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let biases = (0..layer.k_out)
                .map(|k| layer.reconstruct_bias(k))
                .collect::<Result<Vec<_>>>()?;
            let mut weights = Vec::with_capacity(layer.k_out * layer.j_in);
            for k in 0..layer.k_out {
                for j in 0..layer.j_in {
                    weights.push(layer.reconstruct_weight(j, k)?);
                }
            }
            hidden.push(ContinuousLayer::new(
                layer.in_grid.clone(),
                layer.out_grid.clone(),
                layer.j_in,
                layer.k_out,
                biases,
                weights,
                layer.activation,
            )?);
        }
        let out_w = (0..self.output.j_in)
            .map(|j| self.output.reconstruct_weight(j))
            .collect::<Result<Vec<_>>>()?;
        let output = FunctionalOutputLayer::new(
            self.output.in_grid.clone(),
            self.output.bias,
            out_w,
            self.output.activation,
        )?;
        FdnnModel::from_layers(self.input_count, self.input_grid.clone(), hidden, output)
    }

    /// Moves curves sampled on another grid onto the model grid.
    ///
    /// Each curve is smoothed by least squares onto the input basis, weighted
    /// by the data grid's quadrature, and the fit is evaluated on the model
    /// grid. Data already on the model grid is returned unchanged.
    pub fn project_input(&self, data: &CurveSet) -> Result<CurveSet> {
        if data.grid().same_as(&self.input_grid) {
            return Ok(data.clone());
        }
        let basis = self.input_basis();
        let v = basis.design(data.grid())?;
        let q = data.grid().weights();
        let vq = weighted_rows(&v, q);
        let gram = vq.matmul(true, &v, false);
        let target = basis.design(&self.input_grid)?;
        let mut predictors = Vec::with_capacity(data.predictor_count());
        for x in data.predictors() {
            let rhs = x.matmul(false, &vq, false);
            let mut out = Matrix::zeros(x.rows(), self.input_grid.len());
            for i in 0..x.rows() {
                let c = solve_spd(&gram, rhs.row(i)).map_err(|_| {
                    invalid!(
                        "cannot project curves on a {}-point grid onto {} basis functions",
                        data.grid().len(),
                        basis.n_basis()
                    )
                })?;
                out.row_mut(i).copy_from_slice(&target.mul_vec(&c));
            }
            predictors.push(out);
        }
        CurveSet::new(
            self.input_grid.clone(),
            predictors,
            data.responses().to_vec(),
            data.response_kind(),
        )
    }

    fn inputs_from(&self, data: &CurveSet) -> Result<Vec<Matrix>> {
        ensure_same_grid(&self.input_grid, data.grid(), "FBNN input")?;
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

impl Predictor for FbnnModel {
    fn predict(&self, data: &CurveSet) -> Result<Vec<f64>> {
        Ok(self.forward_matrices(self.inputs_from(data)?)?.predictions)
    }
}

impl Trainable for FbnnModel {
    type Cache = FbnnCache;
    type Gradients = FbnnGradients;

    fn forward_batch(&self, data: &CurveSet) -> Result<(Vec<f64>, FbnnCache)> {
        let cache = self.forward_matrices(self.inputs_from(data)?)?;
        Ok((cache.predictions.clone(), cache))
    }

    fn backward_batch(&self, cache: &FbnnCache, dl_dyhat: &[f64]) -> Result<FbnnGradients> {
        self.backward_matrices(cache, dl_dyhat)
    }

    fn apply_gradients(&mut self, grads: &FbnnGradients, lr: f64) -> Result<()> {
        self.functional_step(grads, lr)
    }

    fn parameter_count(&self) -> usize {
        FbnnModel::parameter_count(self)
    }

    fn parameters(&self) -> Vec<f64> {
        FbnnModel::parameters(self)
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        FbnnModel::set_parameters(self, params)
    }

    fn gradient_vector(&self, grads: &FbnnGradients) -> Vec<f64> {
        grads.flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(m: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(m, 0.0, 1.0).unwrap())
    }

    #[test]
    fn init_shapes_and_determinism() {
        let arch = FbnnArch::new(1, unit(200), Activation::Linear).hidden_layer(3, unit(50), Activation::Tanh);
        let m = FbnnModel::init(&arch, 2).unwrap();
        let l = &m.hidden()[0];
        assert_eq!((l.bias_coef().rows(), l.bias_coef().cols()), (3, 7));
        assert_eq!(l.weight_coefs().len(), 3);
        assert!(l.weight_coefs().iter().all(|w| w.rows() == 7 && w.cols() == 7));
        assert_eq!(m, FbnnModel::init(&arch, 2).unwrap());
        assert_ne!(m, FbnnModel::init(&arch, 3).unwrap());
    }

    #[test]
    fn coefficient_shape_must_match_basis() {
        let b7 = BsplineBasis::uniform(7, 4).unwrap();
        let b5 = BsplineBasis::uniform(5, 4).unwrap();
        let r = FbnnLayer::new(
            unit(21),
            unit(11),
            1,
            1,
            b7.clone(),
            b7.clone(),
            b5,
            Matrix::zeros(1, 7),
            alloc::vec![Matrix::zeros(7, 7)],
            Activation::Tanh,
        );
        assert!(matches!(r, Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_model_outputs() {
        let x = GridFunction::from_fn(unit(30), |t| 3.0 * t - 1.0).unwrap();
        let arch = |out| FbnnArch::new(1, unit(30), out).hidden_layer(2, unit(20), Activation::Tanh);
        assert_eq!(
            FbnnModel::zeros(&arch(Activation::Linear))
                .unwrap()
                .forward(core::slice::from_ref(&x))
                .unwrap()
                .0,
            0.0
        );
        assert_eq!(
            FbnnModel::zeros(&arch(Activation::Sigmoid))
                .unwrap()
                .forward(&[x])
                .unwrap()
                .0,
            0.5
        );
    }

    #[test]
    fn moments_of_constant_one_sum_to_one() {
        let arch = FbnnArch::new(1, unit(40), Activation::Linear).hidden_layer(1, unit(20), Activation::Tanh);
        let m = FbnnModel::init(&arch, 0).unwrap();
        let (_, cache) = m.forward(&[GridFunction::constant(unit(40), 1.0)]).unwrap();
        let s: f64 = cache.hidden_moments(0)[0].row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn output_gradient_readout_and_bias() {
        let arch = FbnnArch::new(1, unit(30), Activation::Sigmoid).hidden_layer(2, unit(20), Activation::Tanh);
        let m = FbnnModel::init(&arch, 4).unwrap();
        let (_, cache) = m
            .forward(&[GridFunction::from_fn(unit(30), |t| t * t).unwrap()])
            .unwrap();
        let g = m.backward(&cache, 1.0).unwrap();
        let sp = Activation::Sigmoid.derivative(cache.output_pre_activation()[0]);
        for j in 0..2 {
            for c in 0..7 {
                assert_eq!(g.output.weights.get(j, c), sp * cache.output_moments()[j].get(0, c));
            }
        }

        let lin = FbnnArch::new(1, unit(30), Activation::Linear).hidden_layer(2, unit(20), Activation::Linear);
        let z = FbnnModel::zeros(&lin).unwrap();
        let (_, c0) = z.forward(&[GridFunction::constant(unit(30), 2.0)]).unwrap();
        assert_eq!(z.backward(&c0, 1.0).unwrap().output.bias, 1.0);
    }

    #[test]
    fn reconstruct_single_coefficient() {
        let b = BsplineBasis::uniform(5, 4).unwrap();
        let mut layer = FbnnLayer::zeros(
            unit(21),
            unit(11),
            1,
            1,
            b.clone(),
            b.clone(),
            b.clone(),
            Activation::Tanh,
        )
        .unwrap();
        assert!(layer
            .reconstruct_weight(0, 0)
            .unwrap()
            .values()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        layer.weight_coef[0].set(1, 3, 1.0);
        let w = layer.reconstruct_weight(0, 0).unwrap();
        for (i, &s) in unit(11).points().iter().enumerate() {
            for (j, &t) in unit(21).points().iter().enumerate() {
                let expect = b.eval(s).unwrap()[1] * b.eval(t).unwrap()[3];
                assert!((w.values().get(i, j) - expect).abs() < 1e-12);
            }
        }
        assert!(layer.reconstruct_weight(1, 0).is_err());
    }

    #[test]
    fn parameter_count_is_parsimonious() {
        let arch = FbnnArch::new(1, unit(200), Activation::Linear).hidden_layer(1, unit(50), Activation::Tanh);
        assert_eq!(FbnnModel::zeros(&arch).unwrap().parameter_count(), 64);
    }

    fn quadrature_gram(grid: &Grid, basis: &BsplineBasis) -> Matrix {
        let n = basis.n_basis();
        let mut g = Matrix::zeros(n, n);
        for (&t, &w) in grid.points().iter().zip(grid.weights()) {
            let v = basis.eval(t).unwrap();
            for i in 0..n {
                for j in 0..n {
                    g.set(i, j, g.get(i, j) + w * v[i] * v[j]);
                }
            }
        }
        g
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn functional_step_solves_the_gram_systems() {
        let lr = 0.1;
        let arch = FbnnArch::new(1, unit(30), Activation::Linear).hidden_layer(2, unit(20), Activation::Tanh);
        let m = FbnnModel::init(&arch, 5).unwrap();
        let (_, cache) = m
            .forward(&[GridFunction::from_fn(unit(30), |t| libm::sin(3.0 * t)).unwrap()])
            .unwrap();
        let g = m.backward(&cache, 1.0).unwrap();
        let mut stepped = m.clone();
        stepped.functional_step(&g, lr).unwrap();

        let delta = |a: &Matrix, b: &Matrix| {
            let mut d = a.clone();
            d.axpy(-1.0, b);
            d
        };
        let target = |grad: &Matrix| {
            let mut t = grad.clone();
            t.as_mut_slice().iter_mut().for_each(|v| *v *= -lr);
            t
        };
        let (l0, l1) = (&m.hidden[0], &stepped.hidden[0]);
        let gb = quadrature_gram(&l0.out_grid, &l0.bias_basis);
        let gs = quadrature_gram(&l0.out_grid, &l0.out_basis);
        let gt = quadrature_gram(&l0.in_grid, &l0.in_basis);
        let db = delta(&l1.bias_coef, &l0.bias_coef);
        assert_close(&db.matmul(false, &gb, false), &target(&g.hidden[0].bias), 1e-10);
        for (k, gw) in g.hidden[0].weights.iter().enumerate() {
            let dw = delta(&l1.weight_coef[k], &l0.weight_coef[k]);
            assert_close(
                &gs.matmul(false, &dw, false).matmul(false, &gt, false),
                &target(gw),
                1e-10,
            );
        }
        let go = quadrature_gram(&m.output.in_grid, &m.output.in_basis);
        let dout = delta(&stepped.output.weight_coef, &m.output.weight_coef);
        assert_close(&dout.matmul(false, &go, false), &target(&g.output.weights), 1e-10);
        assert_eq!(stepped.output.bias, m.output.bias - lr * g.output.bias);
    }
}
