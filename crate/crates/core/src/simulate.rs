//! Gaussian-process predictor curves and the scalar-on-function data generators.
//!
//! Curves are drawn from a zero-mean Matérn process with smoothness 5/2. The
//! response scenarios cover linear, continuously additive, single/multiple
//! index and (complex) quadratic mappings, each with a continuous-response
//! and a binary (logistic) variant.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::sigmoid;
use crate::data::{CurveSet, ResponseKind};
use crate::error::{invalid, numeric, Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::linalg::{cholesky, gemm, Matrix};
use crate::math;
use crate::rng::{self, streams};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn covariance parameters; the smoothness is fixed at 5/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    rho: f64,
    sigma2: f64,
}

impl MaternParams {
    pub fn new(rho: f64, sigma2: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(invalid!("Matérn range must be positive, got {rho}"));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(invalid!("Matérn variance must be positive, got {sigma2}"));
        }
        Ok(Self { rho, sigma2 })
    }

    #[inline]
    pub fn rho(&self) -> f64 {
        self.rho
    }

    #[inline]
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        2.5
    }
}

impl Default for MaternParams {
    fn default() -> Self {
        Self { rho: 0.5, sigma2: 1.0 }
    }
}

/// `σ²(1 + √5 d/ρ + 5d²/(3ρ²)) exp(−√5 d/ρ)`.
pub fn matern_cov(d: f64, p: &MaternParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(invalid!("distance must be nonnegative, got {d}"));
    }
    let r = d / p.rho;
    Ok(p.sigma2 * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * math::exp(-SQRT5 * r))
}

/// Covariance matrix of the process on the grid points, without jitter.
pub fn covariance_matrix(grid: &Grid, p: &MaternParams) -> Matrix {
    let t = grid.points();
    Matrix::from_fn(t.len(), t.len(), |i, j| {
        matern_cov((t[i] - t[j]).abs(), p).expect("distances are nonnegative")
    })
}

/// `n` curves as the rows of an `n × m` matrix.
///
/// The covariance gets `1e-10·σ²` on the diagonal before factorization; the
/// jitter grows tenfold up to `1e-6·σ²` while the factorization fails.
pub fn sample_gp_matrix(n: usize, grid: &Grid, p: &MaternParams, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(invalid!("need at least one curve"));
    }
    let base = covariance_matrix(grid, p);
    let m = grid.len();
    let mut jitter = 1e-10;
    let chol = loop {
        let mut k = base.clone();
        for i in 0..m {
            k.set(i, i, k.get(i, i) + jitter * p.sigma2);
        }
        match cholesky(&k) {
            Ok(l) => break l,
            Err(_) if jitter < 1e-6 * (1.0 - 1e-9) => jitter *= 10.0,
            Err(e) => return Err(numeric!("covariance factorization failed with jitter {jitter:e}: {e}")),
        }
    };
    let mut rng = rng::stream(seed, streams::CURVES);
    let z = Matrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
    let mut x = Matrix::zeros(n, m);
    gemm(1.0, &z, false, &chol, true, 0.0, &mut x);
    Ok(x)
}

/// `n` independent zero-mean Matérn curves on `grid`, deterministic in `seed`.
pub fn sample_gp(n: usize, grid: Arc<Grid>, p: &MaternParams, seed: u64) -> Result<Vec<GridFunction>> {
    let x = sample_gp_matrix(n, &grid, p, seed)?;
    (0..n)
        .map(|i| GridFunction::new(grid.clone(), x.row(i).to_vec()))
        .collect()
}

/// Shape of the mapping from curves to the linear predictor `η`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Linear,
    Cam,
    SingleIndex,
    MultipleIndex,
    Quadratic,
    ComplexQuadratic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Linear,
        ScenarioKind::Cam,
        ScenarioKind::SingleIndex,
        ScenarioKind::MultipleIndex,
        ScenarioKind::Quadratic,
        ScenarioKind::ComplexQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Linear => "linear",
            ScenarioKind::Cam => "cam",
            ScenarioKind::SingleIndex => "single-index",
            ScenarioKind::MultipleIndex => "multiple-index",
            ScenarioKind::Quadratic => "quadratic",
            ScenarioKind::ComplexQuadratic => "complex-quadratic",
        }
    }

    pub fn valid_names() -> &'static str {
        "linear (alias logistic), cam, single-index, multiple-index, quadratic, complex-quadratic"
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: alloc::string::String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<alloc::string::String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "linear" | "logistic" => Ok(ScenarioKind::Linear),
            "cam" => Ok(ScenarioKind::Cam),
            "singleindex" => Ok(ScenarioKind::SingleIndex),
            "multipleindex" => Ok(ScenarioKind::MultipleIndex),
            "quadratic" => Ok(ScenarioKind::Quadratic),
            "complexquadratic" => Ok(ScenarioKind::ComplexQuadratic),
            _ => Err(invalid!(
                "unknown scenario '{s}' (valid: {})",
                ScenarioKind::valid_names()
            )),
        }
    }
}

/// A data-generating model: mapping shape, response type and noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub response_kind: ResponseKind,
    /// Standard deviation of the additive noise; ignored for binary responses.
    pub noise_sd: f64,
}

impl Scenario {
    pub fn continuous(kind: ScenarioKind) -> Self {
        Self {
            kind,
            response_kind: ResponseKind::Continuous,
            noise_sd: 1.0,
        }
    }

    pub fn binary(kind: ScenarioKind) -> Self {
        Self {
            kind,
            response_kind: ResponseKind::Binary,
            noise_sd: 0.0,
        }
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    /// Short label such as `linear` or `logistic-cam`.
    pub fn label(&self) -> alloc::string::String {
        match (self.response_kind, self.kind) {
            (ResponseKind::Continuous, k) => k.name().into(),
            (ResponseKind::Binary, ScenarioKind::Linear) => "logistic".into(),
            (ResponseKind::Binary, k) => alloc::format!("logistic-{}", k.name()),
        }
    }
}

/// Weight functions sampled on one grid, reused across curves.
pub struct ScenarioEvaluator {
    scenario: Scenario,
    grid: Arc<Grid>,
    /// `5 sin(2πt)`
    beta: Vec<f64>,
    /// `5 sin(3πt)`
    beta_3pi: Vec<f64>,
    /// `5 sin(πs)`
    beta_pi: Vec<f64>,
}

impl ScenarioEvaluator {
    pub fn new(scenario: Scenario, grid: Arc<Grid>) -> Result<Self> {
        if scenario.response_kind == ResponseKind::Continuous && !(scenario.noise_sd >= 0.0) {
            return Err(invalid!("noise standard deviation must be nonnegative"));
        }
        let wave = |freq: f64| -> Vec<f64> { grid.points().iter().map(|&t| 5.0 * math::sin(freq * PI * t)).collect() };
        Ok(Self {
            scenario,
            beta: wave(2.0),
            beta_3pi: wave(3.0),
            beta_pi: wave(1.0),
            grid,
        })
    }

    fn project(&self, beta: &[f64], x: &[f64]) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(beta)
            .zip(x)
            .map(|((w, b), v)| w * b * v)
            .sum()
    }

    /// `∫∫ f(x(t), x(s)) dt ds` by iterated trapezoidal quadrature.
    fn double_integral(&self, x: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
        let w = self.grid.weights();
        let mut outer = 0.0;
        for (ws, &xs) in w.iter().zip(x) {
            let inner: f64 = w.iter().zip(x).map(|(wt, &xt)| wt * f(xt, xs)).sum();
            outer += ws * inner;
        }
        outer
    }

    /// Noise-free `η` for one sample with `x[r]` holding predictor `r`.
    pub fn eta(&self, x: &[&[f64]]) -> f64 {
        let binary = self.scenario.response_kind == ResponseKind::Binary;
        let integral = |f: &dyn Fn(f64) -> f64, xr: &[f64]| -> f64 {
            self.grid.weights().iter().zip(xr).map(|(w, &v)| w * f(v)).sum()
        };
        match self.scenario.kind {
            ScenarioKind::Linear => x.iter().map(|xr| self.project(&self.beta, xr)).sum(),
            ScenarioKind::Cam => x
                .iter()
                .map(|xr| {
                    if binary {
                        integral(&math::sin, xr)
                    } else {
                        integral(&|v| v * v, xr)
                    }
                })
                .sum(),
            ScenarioKind::SingleIndex => {
                let a: f64 = x.iter().map(|xr| self.project(&self.beta, xr)).sum();
                if binary {
                    math::sin(a)
                } else {
                    a * a
                }
            }
            ScenarioKind::MultipleIndex => {
                let a: f64 = x.iter().map(|xr| self.project(&self.beta, xr)).sum();
                let b: f64 = x.iter().map(|xr| self.project(&self.beta_3pi, xr)).sum();
                if binary {
                    math::sin(math::sin(a) + b)
                } else {
                    a * a + b * b
                }
            }
            ScenarioKind::Quadratic => x
                .iter()
                .map(|xr| {
                    // β(s, t) = β₁(t) β₂(s): contract over t, then integrate against x(s).
                    let lin = self.project(&self.beta, xr);
                    let inner_t = self.project(&self.beta_3pi, xr);
                    let contracted: Vec<f64> = self.beta_pi.iter().map(|b2| b2 * inner_t).collect();
                    lin + self.project(&contracted, xr)
                })
                .sum(),
            ScenarioKind::ComplexQuadratic => x
                .iter()
                .map(|xr| {
                    if binary {
                        integral(&math::sin, xr) + self.double_integral(xr, |a, b| math::sin(a * b))
                    } else {
                        let sq = integral(&|v| v * v, xr);
                        sq + self.double_integral(xr, |a, b| (a * b) * (a * b))
                    }
                })
                .sum(),
        }
    }
}

/// Noise-free `η` of one sample.
pub fn true_response(scenario: &Scenario, x: &[GridFunction]) -> Result<f64> {
    let first = x.first().ok_or_else(|| invalid!("need at least one predictor curve"))?;
    let grid = first.grid().clone();
    for f in x {
        crate::grid::ensure_same_grid(&grid, f.grid(), "true response")?;
    }
    let eval = ScenarioEvaluator::new(*scenario, grid)?;
    let rows: Vec<&[f64]> = x.iter().map(|f| f.values()).collect();
    Ok(eval.eta(&rows))
}

/// Noise-free `η` for every sample of a curve set.
pub fn true_responses(scenario: &Scenario, data: &CurveSet) -> Result<Vec<f64>> {
    let eval = ScenarioEvaluator::new(*scenario, data.grid().clone())?;
    Ok((0..data.len())
        .map(|i| {
            let rows: Vec<&[f64]> = (0..data.predictor_count()).map(|r| data.curve_values(i, r)).collect();
            eval.eta(&rows)
        })
        .collect())
}

fn draw_responses(scenario: &Scenario, eta: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, streams::NOISE);
    match scenario.response_kind {
        ResponseKind::Continuous => eta
            .iter()
            .map(|&e| {
                let z: f64 = StandardNormal.sample(&mut rng);
                e + scenario.noise_sd * z
            })
            .collect(),
        ResponseKind::Binary => eta
            .iter()
            .map(|&e| {
                let u: f64 = rng.random();
                if u < sigmoid(e) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// Attaches responses to `curves[i][r]`: Gaussian noise for continuous scenarios,
/// Bernoulli draws through the logistic link for binary ones.
pub fn gen_dataset(scenario: &Scenario, curves: &[Vec<GridFunction>], seed: u64) -> Result<CurveSet> {
    if curves.is_empty() {
        return Err(invalid!("need at least one sample"));
    }
    let placeholder = vec![0.0; curves.len()];
    let data = CurveSet::from_curves(curves, placeholder, ResponseKind::Continuous)?;
    label(scenario, data, seed)
}

fn label(scenario: &Scenario, data: CurveSet, seed: u64) -> Result<CurveSet> {
    let eta = true_responses(scenario, &data)?;
    let y = draw_responses(scenario, &eta, seed);
    data.with_responses(y, scenario.response_kind)
}

/// Full simulation: `n` Matérn curves on an `m`-point uniform grid, then responses.
///
/// Curves and noise come from separate streams of the same seed.
pub fn simulate(scenario: &Scenario, n: usize, m: usize, matern: &MaternParams, seed: u64) -> Result<CurveSet> {
    let grid = Arc::new(Grid::uniform(m, 0.0, 1.0)?);
    let x = sample_gp_matrix(n, &grid, matern, seed)?;
    let data = CurveSet::new(grid, vec![x], vec![0.0; n], ResponseKind::Continuous)?;
    label(scenario, data, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(m: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(m, 0.0, 1.0).unwrap())
    }

    #[test]
    fn matern_basic_values() {
        let p = MaternParams::new(0.5, 1.0).unwrap();
        assert_eq!(matern_cov(0.0, &p).unwrap(), 1.0);
        assert!(matern_cov(5.0, &p).unwrap() < 1e-6);
        assert!(matern_cov(-0.1, &p).is_err());
        assert!(MaternParams::new(0.0, 1.0).is_err());
        let mut prev = 1.0;
        for i in 1..50 {
            let c = matern_cov(i as f64 * 0.05, &p).unwrap();
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = unit(30);
        let p = MaternParams::default();
        let a = sample_gp(4, g.clone(), &p, 11).unwrap();
        let b = sample_gp(4, g.clone(), &p, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_gp(4, g, &p, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scenario_examples() {
        let g = unit(101);
        let zero = GridFunction::zeros(g.clone());
        let lin = Scenario::continuous(ScenarioKind::Linear);
        assert_eq!(true_response(&lin, &[zero]).unwrap(), 0.0);

        let c = GridFunction::constant(g, 1.7);
        let cam = Scenario::continuous(ScenarioKind::Cam);
        assert!((true_response(&cam, &[c]).unwrap() - 1.7 * 1.7).abs() < 1e-12);
    }

    #[test]
    fn noiseless_linear_responses_equal_eta() {
        let g = unit(40);
        let curves: Vec<Vec<GridFunction>> = sample_gp(20, g, &MaternParams::default(), 3)
            .unwrap()
            .into_iter()
            .map(|c| vec![c])
            .collect();
        let sc = Scenario::continuous(ScenarioKind::Linear).with_noise_sd(0.0);
        let data = gen_dataset(&sc, &curves, 9).unwrap();
        let eta = true_responses(&sc, &data).unwrap();
        assert_eq!(data.responses(), eta.as_slice());
    }

    #[test]
    fn scenario_names_parse() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert_eq!("Logistic".parse::<ScenarioKind>().unwrap(), ScenarioKind::Linear);
        let err = "cubic".parse::<ScenarioKind>().unwrap_err();
        assert!(alloc::format!("{err}").contains("single-index"));
    }
}
