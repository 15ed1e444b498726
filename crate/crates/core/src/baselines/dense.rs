//! Fully connected layers shared by the FNN and MLP baselines.

use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};

use crate::activation::Activation;
use crate::error::{invalid, numeric, Result};
use crate::linalg::{gemm, Matrix};
use crate::math;
use crate::rng::Rng;

/// `h = σ(W z + b)` with `W` stored as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(invalid!("dense layer needs at least one input and one output"));
        }
        if biases.len() != weights.rows() {
            return Err(invalid!(
                "dense layer has {} outputs but {} biases",
                weights.rows(),
                biases.len()
            ));
        }
        if !weights.is_finite() || biases.iter().any(|b| !b.is_finite()) {
            return Err(invalid!("dense layer parameters must be finite"));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Result<Self> {
        Self::new(Matrix::zeros(n_out, n_in), alloc::vec![0.0; n_out], activation)
    }

    /// Weights uniform on `±√(6 / (n_in + n_out))`, zero biases.
    pub fn xavier(n_in: usize, n_out: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut layer = Self::zeros(n_in, n_out, activation)?;
        let a = math::sqrt(6.0 / (n_in + n_out) as f64);
        let u = Uniform::new_inclusive(-a, a).map_err(|e| invalid!("bad init bound: {e}"))?;
        layer.weights.as_mut_slice().iter_mut().for_each(|v| *v = u.sample(rng));
        Ok(layer)
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }
    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.as_slice().len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradients {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Dense layers ending in a single output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    /// Input of each layer, `batch × n_in`.
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl DenseStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| invalid!("a dense stack needs an output layer"))?;
        if last.n_out() != 1 {
            return Err(invalid!(
                "the last dense layer must have one output, has {}",
                last.n_out()
            ));
        }
        if let Some(i) = layers.windows(2).position(|w| w[0].n_out() != w[1].n_in()) {
            return Err(invalid!(
                "dense layer {} outputs {} values but layer {} expects {}",
                i,
                layers[i].n_out(),
                i + 1,
                layers[i + 1].n_in()
            ));
        }
        Ok(Self { layers })
    }

    /// Xavier-initialized hidden layers of the given widths plus the output unit.
    pub fn xavier(
        n_in: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = n_in;
        for &h in hidden {
            layers.push(DenseLayer::xavier(width, h, hidden_activation, rng)?);
            width = h;
        }
        layers.push(DenseLayer::xavier(width, 1, output_activation, rng)?);
        Self::new(layers)
    }

    pub fn zeros(
        n_in: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = n_in;
        for &h in hidden {
            layers.push(DenseLayer::zeros(width, h, hidden_activation)?);
            width = h;
        }
        layers.push(DenseLayer::zeros(width, 1, output_activation)?);
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    /// Predictions for every row of `z` (`batch × input_dim`).
    pub fn forward(&self, z: Matrix) -> (Vec<f64>, DenseCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = z;
        for layer in &self.layers {
            let mut a = Matrix::zeros(h.rows(), layer.n_out());
            for i in 0..a.rows() {
                a.row_mut(i).copy_from_slice(&layer.biases);
            }
            gemm(1.0, &h, false, &layer.weights, true, 1.0, &mut a);
            let mut next = a.clone();
            next.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = layer.activation.apply(*v));
            inputs.push(h);
            pre.push(a);
            h = next;
        }
        (h.into_vec(), DenseCache { inputs, pre })
    }

    /// Gradients summed over the batch and `∂L/∂z` for the stack input.
    pub fn backward(&self, cache: &DenseCache, dl_dyhat: &[f64]) -> Result<(Vec<DenseGradients>, Matrix)> {
        if cache.pre.len() != self.layers.len() || cache.inputs[0].rows() != dl_dyhat.len() {
            return Err(invalid!(
                "cache does not match this dense stack or the loss gradient length"
            ));
        }
        let mut delta = Matrix::from_vec(dl_dyhat.len(), 1, dl_dyhat.to_vec())?;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mut g = delta;
            for (gv, zv) in g.as_mut_slice().iter_mut().zip(cache.pre[l].as_slice()) {
                *gv *= layer.activation.derivative(*zv);
            }
            grads.push(DenseGradients {
                weights: g.matmul(true, &cache.inputs[l], false),
                biases: g.column_sums(),
            });
            delta = g.matmul(false, &layer.weights, false);
        }
        grads.reverse();
        Ok((grads, delta))
    }

    pub(crate) fn check_shapes(&self, grads: &[DenseGradients]) -> Result<()> {
        let ok = grads.len() == self.layers.len()
            && grads.iter().zip(&self.layers).all(|(g, l)| {
                g.weights.rows() == l.weights.rows()
                    && g.weights.cols() == l.weights.cols()
                    && g.biases.len() == l.biases.len()
            });
        if ok {
            Ok(())
        } else {
            Err(invalid!("gradients do not match the dense layer shapes"))
        }
    }

    pub(crate) fn check_finite(grads: &[DenseGradients]) -> Result<()> {
        for (l, g) in grads.iter().enumerate() {
            if !g.weights.is_finite() || g.biases.iter().any(|v| !v.is_finite()) {
                return Err(numeric!("non-finite gradient in dense layer {}", l + 1));
            }
        }
        Ok(())
    }

    /// Call after [`DenseStack::check_shapes`] and [`DenseStack::check_finite`].
    pub(crate) fn step(&mut self, grads: &[DenseGradients], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weights.axpy(-lr, &g.weights);
            for (b, d) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= lr * d;
            }
        }
    }

    pub(crate) fn push_parameters(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
    }

    pub(crate) fn set_parameters_from(&mut self, it: &mut impl Iterator<Item = f64>) {
        for l in &mut self.layers {
            l.weights
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = it.next().unwrap());
            l.biases.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
    }

    pub(crate) fn push_gradients(grads: &[DenseGradients], out: &mut Vec<f64>) {
        for g in grads {
            out.extend_from_slice(g.weights.as_slice());
            out.extend_from_slice(&g.biases);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chaining_is_checked() {
        let a = DenseLayer::zeros(3, 4, Activation::Tanh).unwrap();
        let b = DenseLayer::zeros(5, 1, Activation::Linear).unwrap();
        assert!(DenseStack::new(alloc::vec![a.clone(), b]).is_err());
        assert!(DenseStack::new(alloc::vec![a]).is_err());
    }

    #[test]
    fn single_linear_unit() {
        let w = Matrix::from_vec(1, 2, alloc::vec![2.0, -1.0]).unwrap();
        let s = DenseStack::new(alloc::vec![
            DenseLayer::new(w, alloc::vec![0.5], Activation::Linear).unwrap()
        ])
        .unwrap();
        let z = Matrix::from_vec(2, 2, alloc::vec![1.0, 1.0, 0.0, 3.0]).unwrap();
        let (y, cache) = s.forward(z);
        assert_eq!(y, alloc::vec![1.5, -2.5]);
        let (g, dz) = s.backward(&cache, &[1.0, 2.0]).unwrap();
        assert_eq!(g[0].biases, alloc::vec![3.0]);
        assert_eq!(g[0].weights.as_slice(), &[1.0, 7.0]);
        assert_eq!(dz.as_slice(), &[2.0, -1.0, 4.0, -2.0]);
    }
}
