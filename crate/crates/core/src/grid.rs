//! Evaluation grids on `[0, 1]`, trapezoidal quadrature, and functions sampled on grids.
//!
//! Every integral in the models is a weighted sum over a [`Grid`]. Grids are
//! compared by value: two grids are the same when their points agree to 1e-12.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::linalg::{dot_compensated, Matrix};

const SAME_GRID_TOL: f64 = 1e-12;

/// Ordered points in `[0, 1]` with trapezoidal quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// `m` equally spaced points from `a` to `b`.
    pub fn uniform(m: usize, a: f64, b: f64) -> Result<Self> {
        if m < 2 {
            return Err(invalid!("a grid needs at least 2 points, got {m}"));
        }
        if !(a < b) {
            return Err(invalid!("grid bounds must satisfy a < b, got [{a}, {b}]"));
        }
        let h = (b - a) / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|i| a + i as f64 * h).collect();
        points[m - 1] = b;
        let mut weights = alloc::vec![h; m];
        weights[0] = 0.5 * h;
        weights[m - 1] = 0.5 * h;
        Self::check_domain(&points)?;
        Ok(Self { points, weights })
    }

    /// Arbitrary strictly increasing points; weights follow the trapezoidal rule.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        let m = points.len();
        if m < 2 {
            return Err(invalid!("a grid needs at least 2 points, got {m}"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(invalid!("grid points must be finite"));
        }
        if let Some(i) = points.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(invalid!(
                "grid points must be strictly increasing (index {} -> {})",
                i,
                i + 1
            ));
        }
        Self::check_domain(&points)?;
        let mut weights = Vec::with_capacity(m);
        weights.push(0.5 * (points[1] - points[0]));
        for i in 1..m - 1 {
            weights.push(0.5 * (points[i + 1] - points[i - 1]));
        }
        weights.push(0.5 * (points[m - 1] - points[m - 2]));
        Ok(Self { points, weights })
    }

    /// Explicit points and weights, as stored by [`Grid::points`] and
    /// [`Grid::weights`]. Weights must be positive and sum to the span.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let reference = Self::from_points(points)?;
        if weights.len() != reference.len() {
            return Err(invalid!(
                "{} weights for {} grid points",
                weights.len(),
                reference.len()
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid!("quadrature weights must be positive and finite"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - reference.measure()).abs() > 1e-12 {
            return Err(invalid!(
                "quadrature weights sum to {sum}, expected {}",
                reference.measure()
            ));
        }
        Ok(Self {
            points: reference.points,
            weights,
        })
    }

    fn check_domain(points: &[f64]) -> Result<()> {
        let (first, last) = (points[0], points[points.len() - 1]);
        if first < 0.0 || last > 1.0 {
            return Err(invalid!("grid must lie in [0, 1], got [{first}, {last}]"));
        }
        Ok(())
    }

    #[inline]
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; grids hold at least two points.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Length of the covered interval, which equals the sum of the weights.
    pub fn measure(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }

    /// Value identity: same length and points equal within 1e-12.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (a - b).abs() <= SAME_GRID_TOL)
    }

    /// Trapezoidal integral of sampled values.
    #[inline]
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        dot_compensated(&self.weights, values)
    }
}

/// Convenience for [`Grid::uniform`].
pub fn make_uniform_grid(m: usize, a: f64, b: f64) -> Result<Grid> {
    Grid::uniform(m, a, b)
}

pub(crate) fn ensure_same_grid(expected: &Grid, got: &Grid, what: &str) -> Result<()> {
    if expected.same_as(got) {
        Ok(())
    } else {
        Err(invalid!(
            "{what}: grid mismatch (expected {} points on [{}, {}], got {} points on [{}, {}])",
            expected.len(),
            expected.points[0],
            expected.points[expected.len() - 1],
            got.len(),
            got.points[0],
            got.points[got.len() - 1]
        ))
    }
}

/// A univariate function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid!(
                "function has {} values on a grid of {} points",
                values.len(),
                grid.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("function values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = alloc::vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let values = alloc::vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate_values(&self.values)
    }

    pub fn inner_product(&self, other: &GridFunction) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid, "inner product")?;
        let w = self.grid.weights();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(w)
            .map(|((a, b), w)| a * b * w)
            .sum())
    }
}

/// Trapezoidal integral of `f` over its grid.
pub fn integrate(f: &GridFunction) -> f64 {
    f.integrate()
}

/// `∫ f g` on a shared grid.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.inner_product(g)
}

/// A bivariate function `w(s, t)` sampled on `out_grid × in_grid`.
///
/// Rows index the output variable `s`, columns the integration variable `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateGridFunction {
    out_grid: Arc<Grid>,
    in_grid: Arc<Grid>,
    values: Matrix,
}

impl BivariateGridFunction {
    pub fn new(out_grid: Arc<Grid>, in_grid: Arc<Grid>, values: Matrix) -> Result<Self> {
        if values.rows() != out_grid.len() || values.cols() != in_grid.len() {
            return Err(invalid!(
                "surface is {}x{}, grids are {}x{}",
                values.rows(),
                values.cols(),
                out_grid.len(),
                in_grid.len()
            ));
        }
        if !values.is_finite() {
            return Err(invalid!("surface values must be finite"));
        }
        Ok(Self {
            out_grid,
            in_grid,
            values,
        })
    }

    pub fn zeros(out_grid: Arc<Grid>, in_grid: Arc<Grid>) -> Self {
        let values = Matrix::zeros(out_grid.len(), in_grid.len());
        Self {
            out_grid,
            in_grid,
            values,
        }
    }

    pub fn from_fn(out_grid: Arc<Grid>, in_grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = Matrix::from_fn(out_grid.len(), in_grid.len(), |i, j| {
            f(out_grid.points()[i], in_grid.points()[j])
        });
        Self::new(out_grid, in_grid, values)
    }

    #[inline]
    pub fn out_grid(&self) -> &Arc<Grid> {
        &self.out_grid
    }

    #[inline]
    pub fn in_grid(&self) -> &Arc<Grid> {
        &self.in_grid
    }

    #[inline]
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut Matrix {
        &mut self.values
    }

    /// `s ↦ ∫ w(s, t) h(t) dt`.
    pub fn contract(&self, h: &GridFunction) -> Result<GridFunction> {
        ensure_same_grid(&self.in_grid, h.grid(), "contract")?;
        let weighted: Vec<f64> = h
            .values()
            .iter()
            .zip(self.in_grid.weights())
            .map(|(v, w)| v * w)
            .collect();
        let values = self.values.mul_vec(&weighted);
        GridFunction::new(self.out_grid.clone(), values)
    }
}

/// See [`BivariateGridFunction::contract`].
pub fn contract(w: &BivariateGridFunction, h: &GridFunction) -> Result<GridFunction> {
    w.contract(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn unit(m: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(m, 0.0, 1.0).unwrap())
    }

    #[test]
    fn uniform_grid_shape_and_weights() {
        let g = Grid::uniform(200, 0.0, 1.0).unwrap();
        assert_eq!(g.len(), 200);
        assert!((g.points()[1] - 1.0 / 199.0).abs() < 1e-15);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let g2 = Grid::uniform(2, 0.0, 1.0).unwrap();
        assert_eq!(g2.points(), &[0.0, 1.0]);
        assert_eq!(g2.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        assert!(matches!(
            Grid::uniform(1, 0.0, 1.0),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(Grid::uniform(5, 1.0, 1.0).is_err());
        assert!(Grid::uniform(5, 0.5, 1.5).is_err());
        assert!(Grid::from_points(alloc::vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn nonuniform_weights_sum_to_measure() {
        let g = Grid::from_points(alloc::vec![0.1, 0.15, 0.4, 0.41, 0.9]).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 0.8).abs() < 1e-12);
        assert!(g.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn integrate_examples() {
        let g = unit(201);
        let one = GridFunction::constant(g.clone(), 1.0);
        assert_eq!(integrate(&one), 1.0);
        let t = GridFunction::from_fn(g.clone(), |t| t).unwrap();
        assert_eq!(integrate(&t), 0.5);
        let t2 = GridFunction::from_fn(g, |t| t * t).unwrap();
        assert!((integrate(&t2) - 1.0 / 3.0).abs() < 5e-6);
    }

    #[test]
    fn inner_product_examples() {
        let g = unit(200);
        let one = GridFunction::constant(g.clone(), 1.0);
        assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        let s = GridFunction::from_fn(g, |t| libm::sin(2.0 * PI * t)).unwrap();
        assert!(inner_product(&s, &one).unwrap().abs() < 1e-6);
        assert!((inner_product(&s, &s).unwrap() - 0.5).abs() < 1e-4);

        let other = GridFunction::constant(unit(50), 1.0);
        assert!(inner_product(&s, &other).is_err());
    }

    #[test]
    fn contract_examples() {
        let s_grid = unit(50);
        let t_grid = unit(200);
        let h1 = GridFunction::constant(t_grid.clone(), 1.0);
        let zero = BivariateGridFunction::zeros(s_grid.clone(), t_grid.clone());
        assert!(contract(&zero, &h1).unwrap().values().iter().all(|&v| v == 0.0));

        let ones = BivariateGridFunction::from_fn(s_grid.clone(), t_grid.clone(), |_, _| 1.0).unwrap();
        for v in contract(&ones, &h1).unwrap().values() {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let st = BivariateGridFunction::from_fn(s_grid.clone(), t_grid.clone(), |s, t| s * t).unwrap();
        let ht = GridFunction::from_fn(t_grid, |t| t).unwrap();
        let out = contract(&st, &ht).unwrap();
        for (s, v) in s_grid.points().iter().zip(out.values()) {
            assert!((v - s / 3.0).abs() < 1e-4);
        }

        let wrong = GridFunction::constant(s_grid, 1.0);
        assert!(contract(&st, &wrong).is_err());
    }

    #[test]
    fn grid_identity_is_by_value() {
        let a = Grid::uniform(11, 0.0, 1.0).unwrap();
        let b = Grid::from_points(a.points().to_vec()).unwrap();
        assert!(a.same_as(&b));
        assert!(!a.same_as(&Grid::uniform(12, 0.0, 1.0).unwrap()));
    }
}
