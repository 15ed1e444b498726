//! Traits shared by every fitted model.

use alloc::vec::Vec;

use crate::data::CurveSet;
use crate::error::Result;

/// Anything that maps curves to scalar predictions.
pub trait Predictor {
    /// One prediction per sample of `data`.
    fn predict(&self, data: &CurveSet) -> Result<Vec<f64>>;
}

/// A model trained by gradient descent on batched forward/backward passes.
pub trait Trainable: Predictor + Clone {
    type Cache;
    type Gradients;

    /// Predictions for every sample plus whatever the backward pass needs.
    fn forward_batch(&self, data: &CurveSet) -> Result<(Vec<f64>, Self::Cache)>;

    /// Parameter gradients given `∂L/∂ŷ_i` for each sample of the cached batch,
    /// summed over the batch.
    fn backward_batch(&self, cache: &Self::Cache, dl_dyhat: &[f64]) -> Result<Self::Gradients>;

    /// One descent step of size `lr`. Function-valued weights move along their
    /// L2 gradient; scalars along `−g`. Fails without modifying the model when a
    /// gradient is not finite.
    fn apply_gradients(&mut self, grads: &Self::Gradients, lr: f64) -> Result<()>;

    fn parameter_count(&self) -> usize;

    /// Every trainable scalar in a fixed model-specific order.
    fn parameters(&self) -> Vec<f64>;

    /// Inverse of [`Trainable::parameters`].
    fn set_parameters(&mut self, params: &[f64]) -> Result<()>;

    /// Exact partial derivatives `∂L/∂θ` in the order of [`Trainable::parameters`].
    fn gradient_vector(&self, grads: &Self::Gradients) -> Vec<f64>;
}
