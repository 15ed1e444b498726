//! Functional datasets: `N` samples of `R` curves on a shared grid plus scalar responses.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::grid::{ensure_same_grid, Grid, GridFunction};
use crate::linalg::Matrix;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResponseKind {
    Continuous,
    Binary,
}

impl ResponseKind {
    pub fn name(self) -> &'static str {
        match self {
            ResponseKind::Continuous => "continuous",
            ResponseKind::Binary => "binary",
        }
    }
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResponseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" => Ok(ResponseKind::Continuous),
            "binary" => Ok(ResponseKind::Binary),
            other => Err(invalid!(
                "unknown response kind '{other}' (expected continuous, binary)"
            )),
        }
    }
}

/// Curves and responses.
///
/// Predictor `r` is stored as an `N × m` matrix whose row `i` holds `X_{i,r}`
/// on the shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    grid: Arc<Grid>,
    predictors: Vec<Matrix>,
    responses: Vec<f64>,
    response_kind: ResponseKind,
}

impl CurveSet {
    pub fn new(
        grid: Arc<Grid>,
        predictors: Vec<Matrix>,
        responses: Vec<f64>,
        response_kind: ResponseKind,
    ) -> Result<Self> {
        let n = responses.len();
        if n == 0 {
            return Err(invalid!("a curve set needs at least one sample"));
        }
        if predictors.is_empty() {
            return Err(invalid!("a curve set needs at least one predictor"));
        }
        for (r, p) in predictors.iter().enumerate() {
            if p.rows() != n || p.cols() != grid.len() {
                return Err(invalid!(
                    "predictor {r} is {}x{}, expected {n}x{}",
                    p.rows(),
                    p.cols(),
                    grid.len()
                ));
            }
            if !p.is_finite() {
                return Err(invalid!("predictor {r} has non-finite values"));
            }
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(invalid!("responses must be finite"));
        }
        if response_kind == ResponseKind::Binary {
            if let Some(i) = responses.iter().position(|&y| y != 0.0 && y != 1.0) {
                return Err(invalid!("binary response {i} is {}, expected 0 or 1", responses[i]));
            }
        }
        Ok(Self {
            grid,
            predictors,
            responses,
            response_kind,
        })
    }

    /// Builds from per-sample curves `curves[i][r]`.
    pub fn from_curves(curves: &[Vec<GridFunction>], responses: Vec<f64>, response_kind: ResponseKind) -> Result<Self> {
        let first = curves
            .first()
            .and_then(|c| c.first())
            .ok_or_else(|| invalid!("a curve set needs at least one sample and predictor"))?;
        let grid = first.grid().clone();
        let r_count = curves[0].len();
        let mut predictors: Vec<Matrix> = (0..r_count).map(|_| Matrix::zeros(curves.len(), grid.len())).collect();
        for (i, sample) in curves.iter().enumerate() {
            if sample.len() != r_count {
                return Err(invalid!(
                    "sample {i} has {} predictors, expected {r_count}",
                    sample.len()
                ));
            }
            for (r, f) in sample.iter().enumerate() {
                ensure_same_grid(&grid, f.grid(), "curve set")?;
                predictors[r].row_mut(i).copy_from_slice(f.values());
            }
        }
        Self::new(grid, predictors, responses, response_kind)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    /// Always false; curve sets hold at least one sample.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn predictor_count(&self) -> usize {
        self.predictors.len()
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    #[inline]
    pub fn predictors(&self) -> &[Matrix] {
        &self.predictors
    }

    #[inline]
    pub fn predictor(&self, r: usize) -> &Matrix {
        &self.predictors[r]
    }

    #[inline]
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    #[inline]
    pub fn response_kind(&self) -> ResponseKind {
        self.response_kind
    }

    #[inline]
    pub fn curve_values(&self, i: usize, r: usize) -> &[f64] {
        self.predictors[r].row(i)
    }

    pub fn curve(&self, i: usize, r: usize) -> GridFunction {
        GridFunction::new(self.grid.clone(), self.curve_values(i, r).to_vec())
            .expect("curve set values are validated on construction")
    }

    /// All predictors of sample `i`.
    pub fn sample(&self, i: usize) -> Vec<GridFunction> {
        (0..self.predictor_count()).map(|r| self.curve(i, r)).collect()
    }

    /// Rows `idx` (in the given order) as a new curve set.
    pub fn subset(&self, idx: &[usize]) -> Result<CurveSet> {
        if idx.is_empty() {
            return Err(invalid!("subset index set is empty"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(invalid!("subset index {bad} out of range for {} samples", self.len()));
        }
        let m = self.grid.len();
        let predictors = self
            .predictors
            .iter()
            .map(|p| {
                let mut out = Matrix::zeros(idx.len(), m);
                for (row, &i) in idx.iter().enumerate() {
                    out.row_mut(row).copy_from_slice(p.row(i));
                }
                out
            })
            .collect();
        let responses = idx.iter().map(|&i| self.responses[i]).collect();
        Ok(CurveSet {
            grid: self.grid.clone(),
            predictors,
            responses,
            response_kind: self.response_kind,
        })
    }

    /// Same curves with different responses.
    pub fn with_responses(&self, responses: Vec<f64>, response_kind: ResponseKind) -> Result<CurveSet> {
        Self::new(self.grid.clone(), self.predictors.clone(), responses, response_kind)
    }
}

/// Pointwise centering and scaling of predictor curves, estimated on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    means: Vec<Vec<f64>>,
    scales: Vec<Vec<f64>>,
}

impl Standardizer {
    pub fn fit(data: &CurveSet, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(invalid!("cannot standardize on an empty index set"));
        }
        let n = idx.len() as f64;
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for p in data.predictors() {
            let mut mean = alloc::vec![0.0; p.cols()];
            for &i in idx {
                for (m, v) in mean.iter_mut().zip(p.row(i)) {
                    *m += v / n;
                }
            }
            let mut var = alloc::vec![0.0; p.cols()];
            for &i in idx {
                for ((s, v), m) in var.iter_mut().zip(p.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m) / n;
                }
            }
            let scale = var
                .iter()
                .map(|&v| {
                    let sd = math::sqrt(v);
                    if sd > 1e-12 {
                        sd
                    } else {
                        1.0
                    }
                })
                .collect();
            means.push(mean);
            scales.push(scale);
        }
        Ok(Self { means, scales })
    }

    pub fn from_parts(means: Vec<Vec<f64>>, scales: Vec<Vec<f64>>) -> Result<Self> {
        if means.len() != scales.len()
            || means.iter().zip(&scales).any(|(m, s)| m.len() != s.len())
            || scales.iter().flatten().any(|&s| !(s > 0.0))
        {
            return Err(invalid!("standardizer means and scales are inconsistent"));
        }
        Ok(Self { means, scales })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn scales(&self) -> &[Vec<f64>] {
        &self.scales
    }

    pub fn apply(&self, data: &CurveSet) -> Result<CurveSet> {
        if data.predictor_count() != self.means.len() || self.means.iter().any(|m| m.len() != data.grid().len()) {
            return Err(invalid!("standardizer does not match the dataset shape"));
        }
        let predictors = data
            .predictors()
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(p, (mean, scale))| {
                let mut out = p.clone();
                for i in 0..out.rows() {
                    for ((v, m), s) in out.row_mut(i).iter_mut().zip(mean).zip(scale) {
                        *v = (*v - m) / s;
                    }
                }
                out
            })
            .collect();
        CurveSet::new(
            data.grid().clone(),
            predictors,
            data.responses().to_vec(),
            data.response_kind(),
        )
    }
}
