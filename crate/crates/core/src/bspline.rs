//! Clamped B-spline bases on `[0, 1]`.
//!
//! Knots are uniform in the interior with `order`-fold repetition at both ends,
//! so the basis interpolates the boundary and forms a partition of unity.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::Grid;
use crate::linalg::Matrix;

const DOMAIN_TOL: f64 = 1e-12;

/// A B-spline basis of a given order (degree + 1) on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsplineBasis {
    order: usize,
    interior_knot_count: usize,
    knots: Vec<f64>,
}

impl BsplineBasis {
    /// `n_basis` functions of the given order with uniformly placed interior knots.
    pub fn uniform(n_basis: usize, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid!("B-spline order must be at least 1"));
        }
        if n_basis < order {
            return Err(invalid!(
                "a basis of order {order} needs at least {order} functions, got {n_basis}"
            ));
        }
        let interior = n_basis - order;
        let knots_inside = (1..=interior).map(|i| i as f64 / (interior + 1) as f64).collect();
        Self::with_interior_knots(order, knots_inside)
    }

    /// Clamped basis with explicit interior knots (strictly inside `(0, 1)`, nondecreasing).
    pub fn with_interior_knots(order: usize, interior: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(invalid!("B-spline order must be at least 1"));
        }
        if interior.iter().any(|&k| !(k > 0.0 && k < 1.0)) {
            return Err(invalid!("interior knots must lie strictly inside (0, 1)"));
        }
        if interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid!("interior knots must be nondecreasing"));
        }
        let interior_knot_count = interior.len();
        let mut knots = vec![0.0; order];
        knots.extend(interior);
        knots.extend(core::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            interior_knot_count,
            knots,
        })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn interior_knot_count(&self) -> usize {
        self.interior_knot_count
    }

    #[inline]
    pub fn n_basis(&self) -> usize {
        self.interior_knot_count + self.order
    }

    #[inline]
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Index `mu` of the knot span holding `t`, with `knots[mu] <= t < knots[mu + 1]`
    /// (the last span is closed on the right).
    fn span(&self, t: f64) -> usize {
        let n = self.n_basis();
        if t >= self.knots[n] {
            return n - 1;
        }
        // Binary search over [order - 1, n - 1].
        let (mut lo, mut hi) = (self.order - 1, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Writes all basis values at `t` into `out` (length `n_basis`).
    ///
    /// Uses the triangular Cox–de Boor recursion on the nonzero functions only.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.n_basis() {
            return Err(invalid!(
                "output buffer has {} slots, basis has {}",
                out.len(),
                self.n_basis()
            ));
        }
        if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&t) {
            return Err(invalid!("point {t} lies outside the knot span [0, 1]"));
        }
        let t = t.clamp(0.0, 1.0);
        out.iter_mut().for_each(|v| *v = 0.0);

        let p = self.order - 1;
        let mu = self.span(t);
        let mut n = vec![0.0; self.order];
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[mu + 1 - j];
            right[j] = self.knots[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let first = mu - p;
        out[first..=mu].copy_from_slice(&n);
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_basis()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Design matrix `|grid| × n_basis`: row `i` holds every basis value at `points[i]`.
    pub fn design(&self, grid: &Grid) -> Result<Matrix> {
        let nb = self.n_basis();
        let mut m = Matrix::zeros(grid.len(), nb);
        for (i, &t) in grid.points().iter().enumerate() {
            self.eval_into(t, m.row_mut(i))?;
        }
        Ok(m)
    }
}

/// See [`BsplineBasis::design`].
pub fn bspline_design(basis: &BsplineBasis, grid: &Grid) -> Result<Matrix> {
    basis.design(grid)
}
