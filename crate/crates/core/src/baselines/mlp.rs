//! Plain multilayer perceptron on the concatenated grid values of all predictors.

use alloc::sync::Arc;
use alloc::vec::Vec;

use super::dense::{DenseGradients, DenseStack};
use crate::activation::Activation;
use crate::data::CurveSet;
use crate::error::{invalid, Result};
use crate::grid::{ensure_same_grid, Grid};
use crate::linalg::Matrix;
use crate::model::{Predictor, Trainable};
use crate::rng::{self, streams};

/// Hidden widths used when none are given.
pub const DEFAULT_MLP_HIDDEN: &[usize] = &[16];

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    grid: Arc<Grid>,
    input_count: usize,
    dense: DenseStack,
}

impl MlpModel {
    /// `m·R` inputs, where `m = |grid|` and `R = input_count`.
    pub fn new(grid: Arc<Grid>, input_count: usize, dense: DenseStack) -> Result<Self> {
        if input_count == 0 {
            return Err(invalid!("an MLP needs at least one input curve"));
        }
        if dense.input_dim() != grid.len() * input_count {
            return Err(invalid!(
                "first dense layer takes {} inputs, curves provide {}",
                dense.input_dim(),
                grid.len() * input_count
            ));
        }
        Ok(Self {
            grid,
            input_count,
            dense,
        })
    }

    pub fn init(
        grid: Arc<Grid>,
        input_count: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::stream(seed, streams::INIT);
        let dense = DenseStack::xavier(
            grid.len() * input_count,
            hidden,
            hidden_activation,
            output_activation,
            &mut rng,
        )?;
        Self::new(grid, input_count, dense)
    }

    pub fn zeros(
        grid: Arc<Grid>,
        input_count: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let dense = DenseStack::zeros(grid.len() * input_count, hidden, hidden_activation, output_activation)?;
        Self::new(grid, input_count, dense)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn input_count(&self) -> usize {
        self.input_count
    }
    pub fn dense(&self) -> &DenseStack {
        &self.dense
    }

    fn design(&self, data: &CurveSet) -> Result<Matrix> {
        ensure_same_grid(&self.grid, data.grid(), "MLP input")?;
        if data.predictor_count() != self.input_count {
            return Err(invalid!(
                "model expects {} predictors, data has {}",
                self.input_count,
                data.predictor_count()
            ));
        }
        let m = self.grid.len();
        let mut z = Matrix::zeros(data.len(), m * self.input_count);
        for (r, x) in data.predictors().iter().enumerate() {
            for i in 0..data.len() {
                z.row_mut(i)[r * m..(r + 1) * m].copy_from_slice(x.row(i));
            }
        }
        Ok(z)
    }
}

impl Predictor for MlpModel {
    fn predict(&self, data: &CurveSet) -> Result<Vec<f64>> {
        Ok(self.dense.forward(self.design(data)?).0)
    }
}

impl Trainable for MlpModel {
    type Cache = super::dense::DenseCache;
    type Gradients = Vec<DenseGradients>;

    fn forward_batch(&self, data: &CurveSet) -> Result<(Vec<f64>, Self::Cache)> {
        Ok(self.dense.forward(self.design(data)?))
    }

    fn backward_batch(&self, cache: &Self::Cache, dl_dyhat: &[f64]) -> Result<Self::Gradients> {
        Ok(self.dense.backward(cache, dl_dyhat)?.0)
    }

    fn apply_gradients(&mut self, grads: &Self::Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(invalid!("learning rate must be a nonnegative finite number, got {lr}"));
        }
        self.dense.check_shapes(grads)?;
        DenseStack::check_finite(grads)?;
        self.dense.step(grads, lr);
        Ok(())
    }

    fn parameter_count(&self) -> usize {
        self.dense.parameter_count()
    }

    fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.dense.push_parameters(&mut out);
        out
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() || params.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("expected {} finite parameters", self.parameter_count()));
        }
        self.dense.set_parameters_from(&mut params.iter().copied());
        Ok(())
    }

    fn gradient_vector(&self, grads: &Self::Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        DenseStack::push_gradients(grads, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mlp_predicts_zero() {
        let g = Arc::new(Grid::uniform(10, 0.0, 1.0).unwrap());
        let m = MlpModel::zeros(g.clone(), 2, &[4], Activation::Tanh, Activation::Linear).unwrap();
        let x = Matrix::from_fn(3, 10, |i, j| (i + j) as f64);
        let d = CurveSet::new(
            g,
            alloc::vec![x.clone(), x],
            alloc::vec![1.0, 2.0, 3.0],
            crate::data::ResponseKind::Continuous,
        )
        .unwrap();
        assert_eq!(m.predict(&d).unwrap(), alloc::vec![0.0; 3]);
        assert_eq!(m.parameter_count(), 20 * 4 + 4 + 4 + 1);
    }
}
