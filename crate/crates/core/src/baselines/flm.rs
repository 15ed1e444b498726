//! Functional linear model `E[Y | X] = g⁻¹(α + Σᵣ ∫ βᵣ(t) Xᵣ(t) dt)`.
//!
//! Each `βᵣ` is expanded in a B-spline basis, which turns the model into a
//! linear model on the basis moments `Zᵢ,ᵣb = ∫ v_b(t) Xᵢ,ᵣ(t) dt`. The
//! identity link is fitted by ridge least squares, the logistic link by
//! Newton's method on the penalized mean negative log-likelihood. The ridge
//! penalty `ridge·‖β‖²` is added to the mean loss and leaves `α` unpenalized.

use alloc::vec::Vec;
use core::fmt;

use crate::activation::sigmoid;
use crate::bspline::BsplineBasis;
use crate::data::{CurveSet, ResponseKind};
use crate::error::{invalid, numeric, Error, Result};
use crate::linalg::{cholesky, cholesky_solve, Matrix};
use crate::math;
use crate::model::Predictor;

pub const DEFAULT_FLM_RIDGE: f64 = 1e-6;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Identity,
    Logistic,
}

impl Link {
    pub fn for_response(kind: ResponseKind) -> Self {
        match kind {
            ResponseKind::Continuous => Link::Identity,
            ResponseKind::Binary => Link::Logistic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logistic => "logistic",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlmModel {
    basis: BsplineBasis,
    alpha: f64,
    /// `R × n_basis`.
    beta_coef: Matrix,
    ridge: f64,
    link: Link,
}

/// Basis moments `[1, Zᵢ,₀₀, …]` of every sample, `N × (1 + R·n_basis)`.
fn design(data: &CurveSet, basis: &BsplineBasis) -> Result<Matrix> {
    let v = basis.design(data.grid())?;
    let mut vq = v;
    for (i, q) in data.grid().weights().iter().enumerate() {
        vq.row_mut(i).iter_mut().for_each(|x| *x *= q);
    }
    let nb = basis.n_basis();
    let mut z = Matrix::zeros(data.len(), 1 + data.predictor_count() * nb);
    for (r, x) in data.predictors().iter().enumerate() {
        let m = x.matmul(false, &vq, false);
        for i in 0..data.len() {
            z.row_mut(i)[1 + r * nb..1 + (r + 1) * nb].copy_from_slice(m.row(i));
        }
    }
    for i in 0..data.len() {
        z.set(i, 0, 1.0);
    }
    Ok(z)
}

fn singular(ridge: f64) -> Error {
    if ridge == 0.0 {
        numeric!("normal equations are singular; use ridge > 0")
    } else {
        numeric!("normal equations are singular at ridge {ridge}; increase ridge")
    }
}

impl FlmModel {
    pub fn from_parts(basis: BsplineBasis, alpha: f64, beta_coef: Matrix, ridge: f64, link: Link) -> Result<Self> {
        if beta_coef.rows() == 0 || beta_coef.cols() != basis.n_basis() {
            return Err(invalid!(
                "beta coefficients are {}x{}, expected R x {}",
                beta_coef.rows(),
                beta_coef.cols(),
                basis.n_basis()
            ));
        }
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(invalid!("ridge must be a nonnegative finite number, got {ridge}"));
        }
        if !alpha.is_finite() || !beta_coef.is_finite() {
            return Err(invalid!("coefficients must be finite"));
        }
        Ok(Self {
            basis,
            alpha,
            beta_coef,
            ridge,
            link,
        })
    }

    /// Fits on the rows `idx`; the link follows the response kind.
    pub fn fit(data: &CurveSet, idx: &[usize], basis: BsplineBasis, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(invalid!("ridge must be a nonnegative finite number, got {ridge}"));
        }
        let train = data.subset(idx)?;
        let z = design(&train, &basis)?;
        let y = train.responses();
        let n = y.len() as f64;
        let p = z.cols();
        let link = Link::for_response(train.response_kind());
        let mut penalty = alloc::vec![ridge; p];
        penalty[0] = 0.0;

        let theta = match link {
            Link::Identity => {
                let mut gram = z.matmul(true, &z, false);
                gram.as_mut_slice().iter_mut().for_each(|v| *v /= n);
                for (j, pen) in penalty.iter().enumerate() {
                    gram.set(j, j, gram.get(j, j) + pen);
                }
                let rhs: Vec<f64> = z.tr_mul_vec(y).into_iter().map(|v| v / n).collect();
                let l = cholesky(&gram).map_err(|_| singular(ridge))?;
                cholesky_solve(&l, &rhs)
            }
            Link::Logistic => newton_logistic(&z, y, &penalty).map_err(|e| match e {
                Error::NumericFailure(_) if ridge == 0.0 => singular(ridge),
                other => other,
            })?,
        };
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(singular(ridge));
        }
        let beta_coef = Matrix::from_vec(train.predictor_count(), basis.n_basis(), theta[1..].to_vec())?;
        Self::from_parts(basis, theta[0], beta_coef, ridge, link)
    }

    pub fn basis(&self) -> &BsplineBasis {
        &self.basis
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta_coef(&self) -> &Matrix {
        &self.beta_coef
    }
    pub fn ridge(&self) -> f64 {
        self.ridge
    }
    pub fn link(&self) -> Link {
        self.link
    }

    pub fn parameter_count(&self) -> usize {
        1 + self.beta_coef.as_slice().len()
    }

    /// Linear predictor `α + Σᵣ ∫ βᵣ Xᵣ` for every sample.
    pub fn linear_predictor(&self, data: &CurveSet) -> Result<Vec<f64>> {
        if data.predictor_count() != self.beta_coef.rows() {
            return Err(invalid!(
                "model expects {} predictors, data has {}",
                self.beta_coef.rows(),
                data.predictor_count()
            ));
        }
        let z = design(data, &self.basis)?;
        let mut theta = alloc::vec![self.alpha];
        theta.extend_from_slice(self.beta_coef.as_slice());
        Ok(z.mul_vec(&theta))
    }
}

impl Predictor for FlmModel {
    /// Ordinary predictions are on the response scale: the linear predictor
    /// for the identity link, a probability for the logistic link. Curves may
    /// lie on any grid.
    fn predict(&self, data: &CurveSet) -> Result<Vec<f64>> {
        let eta = self.linear_predictor(data)?;
        Ok(match self.link {
            Link::Identity => eta,
            Link::Logistic => eta.into_iter().map(sigmoid).collect(),
        })
    }
}

fn penalized_nll(z: &Matrix, y: &[f64], theta: &[f64], penalty: &[f64]) -> f64 {
    let n = y.len() as f64;
    let eta = z.mul_vec(theta);
    let nll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &t)| {
            // log(1 + e^η) − yη, stable for large |η|
            let softplus = if e > 0.0 {
                e + math::ln(1.0 + math::exp(-e))
            } else {
                math::ln(1.0 + math::exp(e))
            };
            softplus - t * e
        })
        .sum::<f64>()
        / n;
    nll + theta.iter().zip(penalty).map(|(t, p)| p * t * t).sum::<f64>()
}

/// Newton iterations with step halving until `‖∇‖ < 1e-8` or 100 iterations.
fn newton_logistic(z: &Matrix, y: &[f64], penalty: &[f64]) -> Result<Vec<f64>> {
    let n = y.len() as f64;
    let p = z.cols();
    let mut theta = alloc::vec![0.0; p];
    let mut obj = penalized_nll(z, y, &theta, penalty);
    for _ in 0..NEWTON_MAX_ITER {
        let eta = z.mul_vec(&theta);
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid: Vec<f64> = mu.iter().zip(y).map(|(m, t)| (m - t) / n).collect();
        let mut grad = z.tr_mul_vec(&resid);
        for ((g, t), pen) in grad.iter_mut().zip(&theta).zip(penalty) {
            *g += 2.0 * pen * t;
        }
        let gnorm = math::sqrt(grad.iter().map(|g| g * g).sum());
        if gnorm < NEWTON_TOL {
            return Ok(theta);
        }
        let mut zw = z.clone();
        for (i, m) in mu.iter().enumerate() {
            let w = m * (1.0 - m) / n;
            zw.row_mut(i).iter_mut().for_each(|v| *v *= w);
        }
        let mut hess = zw.matmul(true, z, false);
        for (j, pen) in penalty.iter().enumerate() {
            hess.set(j, j, hess.get(j, j) + 2.0 * pen);
        }
        let l = cholesky(&hess)?;
        let step = cholesky_solve(&l, &grad);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let c_obj = penalized_nll(z, y, &cand, penalty);
            if c_obj <= obj || t < 1e-10 {
                theta = cand;
                obj = c_obj;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(theta)
}
