//! Comparison models: functional linear model, functional neural network and
//! a plain multilayer perceptron on grid values.

pub mod dense;
pub mod flm;
pub mod fnn;
pub mod mlp;

pub use dense::{DenseGradients, DenseLayer, DenseStack};
pub use flm::{FlmModel, Link, DEFAULT_FLM_RIDGE};
pub use fnn::{FnnGradients, FnnModel, DEFAULT_FNN_FUNCTIONAL_NEURONS, DEFAULT_FNN_HIDDEN};
pub use mlp::{MlpModel, DEFAULT_MLP_HIDDEN};
