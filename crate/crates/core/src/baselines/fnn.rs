//! Functional neural network: a layer of functional neurons followed by dense layers.
//!
//! Neuron `k` of the first layer computes the scalar
//! `Hₖ = σ(bₖ + Σᵣ ∫ Wₖᵣ(t) Xᵣ(t) dt)`. The weight functions live on the data
//! grid and, as in [`crate::fdnn`], their gradients are functional (no
//! quadrature weights) and updated pointwise.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};

use super::dense::{DenseCache, DenseGradients, DenseStack};
use crate::activation::Activation;
use crate::data::CurveSet;
use crate::error::{invalid, numeric, Result};
use crate::grid::{ensure_same_grid, Grid, GridFunction};
use crate::linalg::Matrix;
use crate::math;
use crate::model::{Predictor, Trainable};
use crate::rng::{self, streams};

pub const DEFAULT_FNN_FUNCTIONAL_NEURONS: usize = 4;
pub const DEFAULT_FNN_HIDDEN: &[usize] = &[4];

#[derive(Debug, Clone, PartialEq)]
pub struct FnnModel {
    grid: Arc<Grid>,
    input_count: usize,
    biases: Vec<f64>,
    /// `Wₖᵣ` at index `k * input_count + r`.
    weights: Vec<GridFunction>,
    activation: Activation,
    dense: DenseStack,
}

#[derive(Debug, Clone)]
pub struct FnnCache {
    inputs: Vec<Matrix>,
    /// `batch × K` functional-layer pre-activations.
    pre: Matrix,
    dense: DenseCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnnGradients {
    pub biases: Vec<f64>,
    /// `∂L/∂Wₖᵣ(t)` at index `k * input_count + r`.
    pub weights: Vec<Vec<f64>>,
    pub dense: Vec<DenseGradients>,
}

impl FnnModel {
    pub fn new(
        grid: Arc<Grid>,
        input_count: usize,
        biases: Vec<f64>,
        weights: Vec<GridFunction>,
        activation: Activation,
        dense: DenseStack,
    ) -> Result<Self> {
        let k = biases.len();
        if input_count == 0 || k == 0 {
            return Err(invalid!(
                "an FNN needs at least one input curve and one functional neuron"
            ));
        }
        if weights.len() != k * input_count {
            return Err(invalid!(
                "expected {} weight functions, got {}",
                k * input_count,
                weights.len()
            ));
        }
        for w in &weights {
            ensure_same_grid(&grid, w.grid(), "functional weight")?;
        }
        if dense.input_dim() != k {
            return Err(invalid!(
                "functional layer has {k} neurons but the first dense layer takes {}",
                dense.input_dim()
            ));
        }
        if biases.iter().any(|b| !b.is_finite()) {
            return Err(invalid!("biases must be finite"));
        }
        Ok(Self {
            grid,
            input_count,
            biases,
            weights,
            activation,
            dense,
        })
    }

    /// Functional weights uniform on `±√(6 / (R·|T| + K)) / |T|`, Xavier dense
    /// layers, zero biases.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        grid: Arc<Grid>,
        input_count: usize,
        functional_neurons: usize,
        hidden: &[usize],
        activation: Activation,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if functional_neurons == 0 {
            return Err(invalid!("an FNN needs at least one functional neuron"));
        }
        let mut rng = rng::stream(seed, streams::INIT);
        let measure = grid.weights().iter().sum::<f64>();
        let a = math::sqrt(6.0 / (input_count as f64 * measure + functional_neurons as f64)) / measure;
        let u = Uniform::new_inclusive(-a, a).map_err(|e| invalid!("bad init bound: {e}"))?;
        let mut weights = Vec::with_capacity(functional_neurons * input_count);
        for _ in 0..functional_neurons * input_count {
            let values = (0..grid.len()).map(|_| u.sample(&mut rng)).collect();
            weights.push(GridFunction::new(grid.clone(), values)?);
        }
        let dense = DenseStack::xavier(functional_neurons, hidden, activation, output_activation, &mut rng)?;
        Self::new(
            grid,
            input_count,
            alloc::vec![0.0; functional_neurons],
            weights,
            activation,
            dense,
        )
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn input_count(&self) -> usize {
        self.input_count
    }
    pub fn functional_neurons(&self) -> usize {
        self.biases.len()
    }
    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
    pub fn weight(&self, k: usize, r: usize) -> &GridFunction {
        &self.weights[k * self.input_count + r]
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn dense(&self) -> &DenseStack {
        &self.dense
    }

    fn inputs_from(&self, data: &CurveSet) -> Result<Vec<Matrix>> {
        ensure_same_grid(&self.grid, data.grid(), "FNN input")?;
        if data.predictor_count() != self.input_count {
            return Err(invalid!(
                "model expects {} predictors, data has {}",
                self.input_count,
                data.predictor_count()
            ));
        }
        Ok(data.predictors().to_vec())
    }

    fn forward_inputs(&self, inputs: Vec<Matrix>) -> (Vec<f64>, FnnCache) {
        let batch = inputs[0].rows();
        let k_count = self.biases.len();
        let q = self.grid.weights();
        let mut pre = Matrix::zeros(batch, k_count);
        for k in 0..k_count {
            let mut col = alloc::vec![self.biases[k]; batch];
            for (r, x) in inputs.iter().enumerate() {
                let wq: Vec<f64> = self.weight(k, r).values().iter().zip(q).map(|(w, q)| w * q).collect();
                for (c, v) in col.iter_mut().zip(x.mul_vec(&wq)) {
                    *c += v;
                }
            }
            for (i, c) in col.into_iter().enumerate() {
                pre.set(i, k, c);
            }
        }
        let mut h = pre.clone();
        h.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
        let (yhat, dense) = self.dense.forward(h);
        (yhat, FnnCache { inputs, pre, dense })
    }
}

impl Predictor for FnnModel {
    fn predict(&self, data: &CurveSet) -> Result<Vec<f64>> {
        Ok(self.forward_inputs(self.inputs_from(data)?).0)
    }
}

impl Trainable for FnnModel {
    type Cache = FnnCache;
    type Gradients = FnnGradients;

    fn forward_batch(&self, data: &CurveSet) -> Result<(Vec<f64>, FnnCache)> {
        Ok(self.forward_inputs(self.inputs_from(data)?))
    }

    fn backward_batch(&self, cache: &FnnCache, dl_dyhat: &[f64]) -> Result<FnnGradients> {
        if cache.inputs.len() != self.input_count || cache.pre.cols() != self.biases.len() {
            return Err(invalid!("cache does not match this model"));
        }
        let (dense, mut g) = self.dense.backward(&cache.dense, dl_dyhat)?;
        for (gv, zv) in g.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            *gv *= self.activation.derivative(*zv);
        }
        let biases = g.column_sums();
        let mut weights = Vec::with_capacity(self.weights.len());
        for k in 0..self.biases.len() {
            let gk: Vec<f64> = (0..g.rows()).map(|i| g.get(i, k)).collect();
            for x in &cache.inputs {
                weights.push(x.tr_mul_vec(&gk));
            }
        }
        Ok(FnnGradients { biases, weights, dense })
    }

    fn apply_gradients(&mut self, grads: &FnnGradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(invalid!("learning rate must be a nonnegative finite number, got {lr}"));
        }
        if grads.biases.len() != self.biases.len()
            || grads.weights.len() != self.weights.len()
            || grads.weights.iter().any(|w| w.len() != self.grid.len())
        {
            return Err(invalid!("gradients do not match the functional layer shape"));
        }
        self.dense.check_shapes(&grads.dense)?;
        if grads
            .biases
            .iter()
            .chain(grads.weights.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(numeric!("non-finite gradient in the functional layer"));
        }
        DenseStack::check_finite(&grads.dense)?;
        for (b, d) in self.biases.iter_mut().zip(&grads.biases) {
            *b -= lr * d;
        }
        for (w, gw) in self.weights.iter_mut().zip(&grads.weights) {
            for (v, d) in w.values_mut().iter_mut().zip(gw) {
                *v -= lr * d;
            }
        }
        self.dense.step(&grads.dense, lr);
        Ok(())
    }

    fn parameter_count(&self) -> usize {
        self.biases.len() + self.weights.len() * self.grid.len() + self.dense.parameter_count()
    }

    /// Functional biases, weight functions, then the dense layers.
    fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend_from_slice(&self.biases);
        for w in &self.weights {
            out.extend_from_slice(w.values());
        }
        self.dense.push_parameters(&mut out);
        out
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() || params.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("expected {} finite parameters", self.parameter_count()));
        }
        let mut it = params.iter().copied();
        self.biases.iter_mut().for_each(|v| *v = it.next().unwrap());
        for w in &mut self.weights {
            w.values_mut().iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        self.dense.set_parameters_from(&mut it);
        Ok(())
    }

    fn gradient_vector(&self, grads: &FnnGradients) -> Vec<f64> {
        let q = self.grid.weights();
        let mut out = grads.biases.clone();
        for w in &grads.weights {
            out.extend(w.iter().zip(q).map(|(g, q)| g * q));
        }
        DenseStack::push_gradients(&grads.dense, &mut out);
        out
    }
}
