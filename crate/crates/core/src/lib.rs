//! Functional neural networks for scalar-on-function regression and classification.
//!
//! Two network families share the same data model:
//!
//! * [`fdnn`] stores weight surfaces and bias functions by their grid values
//!   and trains them with functional gradients.
//! * [`fbnn`] expands the same objects in B-spline bases and trains the
//!   coefficients.
//!
//! [`simulate`] generates Gaussian-process curves and benchmark responses,
//! [`baselines`] holds the comparison models and [`training`] runs
//! full-batch gradient descent with early stopping for any [`model::Trainable`].
//!
//! The crate is `no_std` with `alloc`; the `std` feature only forwards to
//! dependencies.

#![cfg_attr(not(test), no_std)]
// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
mod math;

pub mod activation;
pub mod baselines;
pub mod bspline;
pub mod data;
pub mod fbnn;
pub mod fdnn;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod training;

pub use error::{Error, Result};
