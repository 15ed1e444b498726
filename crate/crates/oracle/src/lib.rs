//! Independent test oracles.
//!
//! Each model gets a naive forward pass written directly from its defining
//! sums and evaluated in double-double arithmetic, so that central finite
//! differences of the loss are limited by truncation rather than by f64
//! cancellation. Nothing here reuses the batched matrix code of the models.

pub mod dd;

use funcnet_core::activation::Activation;
use funcnet_core::baselines::{DenseStack, FnnModel, MlpModel};
use funcnet_core::bspline::BsplineBasis;
use funcnet_core::data::CurveSet;
use funcnet_core::fbnn::FbnnModel;
use funcnet_core::fdnn::FdnnModel;
use funcnet_core::grid::Grid;
use funcnet_core::model::Trainable;
use funcnet_core::training::{batch_loss, LossKind};

pub use dd::Dd;

pub fn activate(act: Activation, x: Dd) -> Dd {
    match act {
        Activation::Linear => x,
        Activation::Relu => {
            if x.hi > 0.0 {
                x
            } else {
                Dd::ZERO
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => x.sigmoid(),
    }
}

/// Mean loss over the batch in double-double.
pub fn loss(kind: LossKind, yhat: &[Dd], y: &[f64]) -> Dd {
    let mut total = Dd::ZERO;
    for (&p, &t) in yhat.iter().zip(y) {
        total += match kind {
            LossKind::SquaredError => {
                let r = p - Dd::new(t);
                r * r
            }
            LossKind::BinaryCrossEntropy => {
                let p = if p.hi < 1e-12 {
                    Dd::new(1e-12)
                } else if p.hi > 1.0 - 1e-12 {
                    Dd::new(1.0 - 1e-12)
                } else {
                    p
                };
                -(Dd::new(t) * p.ln() + Dd::new(1.0 - t) * (Dd::ONE - p).ln())
            }
        };
    }
    total / Dd::new(y.len() as f64)
}

/// A model with a reference double-double forward pass.
pub trait Reference: Trainable {
    fn reference_predictions(&self, data: &CurveSet) -> Vec<Dd>;
}

/// One sample's predictor curves as double-double vectors.
fn sample_dd(data: &CurveSet, i: usize) -> Vec<Vec<Dd>> {
    (0..data.predictor_count())
        .map(|r| data.curve_values(i, r).iter().map(|&v| Dd::new(v)).collect())
        .collect()
}

/// `Σ_t q_t f(t)`.
fn quad(grid: &Grid, f: impl Fn(usize) -> Dd) -> Dd {
    let mut s = Dd::ZERO;
    for (t, &q) in grid.weights().iter().enumerate() {
        s += Dd::new(q) * f(t);
    }
    s
}

impl Reference for FdnnModel {
    fn reference_predictions(&self, data: &CurveSet) -> Vec<Dd> {
        (0..data.len())
            .map(|i| {
                let mut h = sample_dd(data, i);
                for layer in self.hidden() {
                    let (tg, sg) = (layer.in_grid(), layer.out_grid());
                    let next = (0..layer.k_out())
                        .map(|k| {
                            let b = layer.bias(k).values();
                            (0..sg.len())
                                .map(|s| {
                                    let mut z = Dd::new(b[s]);
                                    for (j, hj) in h.iter().enumerate() {
                                        let w = layer.weight(j, k).values();
                                        z += quad(tg, |t| Dd::new(w.get(s, t)) * hj[t]);
                                    }
                                    activate(layer.activation(), z)
                                })
                                .collect()
                        })
                        .collect();
                    h = next;
                }
                let out = self.output();
                let mut z = Dd::new(out.bias());
                for (j, hj) in h.iter().enumerate() {
                    let w = out.weights()[j].values();
                    z += quad(out.in_grid(), |t| Dd::new(w[t]) * hj[t]);
                }
                activate(out.activation(), z)
            })
            .collect()
    }
}

/// Basis values `v_c(x)` at every point of `grid`, indexed `[point][c]`.
fn basis_table(basis: &BsplineBasis, grid: &Grid) -> Vec<Vec<f64>> {
    grid.points().iter().map(|&x| basis.eval(x).unwrap()).collect()
}

fn expand(coef: &[f64], v: &[f64]) -> Dd {
    let mut s = Dd::ZERO;
    for (c, b) in coef.iter().zip(v) {
        s += Dd::new(*c) * Dd::new(*b);
    }
    s
}

impl Reference for FbnnModel {
    /// Weight surfaces are expanded pointwise, `w(s, t) = Σ_{c,d} W_cd v_c(s) v_d(t)`,
    /// and then integrated exactly as a functional layer would.
    fn reference_predictions(&self, data: &CurveSet) -> Vec<Dd> {
        struct Expanded {
            bias: Vec<Vec<Dd>>,
            weight: Vec<Vec<Vec<Dd>>>,
        }
        let layers: Vec<Expanded> = self
            .hidden()
            .iter()
            .map(|layer| {
                let vb = basis_table(layer.bias_basis(), layer.out_grid());
                let vs = basis_table(layer.out_basis(), layer.out_grid());
                let vt = basis_table(layer.in_basis(), layer.in_grid());
                let bias = (0..layer.k_out())
                    .map(|k| vb.iter().map(|v| expand(layer.bias_coef().row(k), v)).collect())
                    .collect();
                let weight = (0..layer.k_out() * layer.j_in())
                    .map(|idx| {
                        let (k, j) = (idx / layer.j_in(), idx % layer.j_in());
                        let w = layer.weight_coef(j, k);
                        vs.iter()
                            .map(|a| {
                                vt.iter()
                                    .map(|b| {
                                        let mut s = Dd::ZERO;
                                        for (c, &ac) in a.iter().enumerate().take(w.rows()) {
                                            s += Dd::new(ac) * expand(w.row(c), b);
                                        }
                                        s
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                Expanded { bias, weight }
            })
            .collect();
        let out = self.output();
        let vo = basis_table(out.in_basis(), out.in_grid());
        let out_w: Vec<Vec<Dd>> = (0..out.j_in())
            .map(|j| vo.iter().map(|v| expand(out.weight_coef().row(j), v)).collect())
            .collect();

        (0..data.len())
            .map(|i| {
                let mut h = sample_dd(data, i);
                for (layer, ex) in self.hidden().iter().zip(&layers) {
                    let next = (0..layer.k_out())
                        .map(|k| {
                            (0..layer.out_grid().len())
                                .map(|s| {
                                    let mut z = ex.bias[k][s];
                                    for (j, hj) in h.iter().enumerate() {
                                        let w = &ex.weight[k * layer.j_in() + j][s];
                                        z += quad(layer.in_grid(), |t| w[t] * hj[t]);
                                    }
                                    activate(layer.activation(), z)
                                })
                                .collect()
                        })
                        .collect();
                    h = next;
                }
                let mut z = Dd::new(out.bias());
                for (j, hj) in h.iter().enumerate() {
                    z += quad(out.in_grid(), |t| out_w[j][t] * hj[t]);
                }
                activate(out.activation(), z)
            })
            .collect()
    }
}

fn dense_forward(stack: &DenseStack, mut h: Vec<Dd>) -> Dd {
    for layer in stack.layers() {
        h = (0..layer.n_out())
            .map(|o| {
                let mut z = Dd::new(layer.biases()[o]);
                for (w, x) in layer.weights().row(o).iter().zip(&h) {
                    z += Dd::new(*w) * *x;
                }
                activate(layer.activation(), z)
            })
            .collect();
    }
    h[0]
}

impl Reference for FnnModel {
    fn reference_predictions(&self, data: &CurveSet) -> Vec<Dd> {
        (0..data.len())
            .map(|i| {
                let x = sample_dd(data, i);
                let h = (0..self.functional_neurons())
                    .map(|k| {
                        let mut z = Dd::new(self.biases()[k]);
                        for (r, xr) in x.iter().enumerate() {
                            let w = self.weight(k, r).values();
                            z += quad(self.grid(), |t| Dd::new(w[t]) * xr[t]);
                        }
                        activate(self.activation(), z)
                    })
                    .collect();
                dense_forward(self.dense(), h)
            })
            .collect()
    }
}

impl Reference for MlpModel {
    fn reference_predictions(&self, data: &CurveSet) -> Vec<Dd> {
        (0..data.len())
            .map(|i| dense_forward(self.dense(), sample_dd(data, i).into_iter().flatten().collect()))
            .collect()
    }
}

/// Worst discrepancies between analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    /// Largest relative error over parameters with `|analytic| >= floor`.
    pub max_relative: f64,
    /// Largest absolute error over the remaining parameters.
    pub max_absolute: f64,
    pub parameters: usize,
}

/// Compares the model's analytic gradient of the mean loss with central
/// differences of the reference loss.
///
/// Each parameter is perturbed by `±h` in f64 and the difference quotient uses
/// the perturbation actually realised, so representation error in `θ ± h`
/// does not masquerade as a gradient error.
pub fn fd_check<M: Reference>(model: &M, data: &CurveSet, kind: LossKind, h: f64, floor: f64) -> FdReport {
    let (yhat, cache) = model.forward_batch(data).unwrap();
    let (_, dl) = batch_loss(kind, &yhat, data.responses()).unwrap();
    let analytic = model.gradient_vector(&model.backward_batch(&cache, &dl).unwrap());
    let theta = model.parameters();
    assert_eq!(
        analytic.len(),
        theta.len(),
        "gradient_vector and parameters disagree in length"
    );
    let mut probe = model.clone();
    let ref_loss = |m: &M| loss(kind, &m.reference_predictions(data), data.responses());
    let mut report = FdReport {
        max_relative: 0.0,
        max_absolute: 0.0,
        parameters: theta.len(),
    };
    let mut p = theta.clone();
    for i in 0..theta.len() {
        let (up, down) = (theta[i] + h, theta[i] - h);
        p[i] = up;
        probe.set_parameters(&p).unwrap();
        let l_up = ref_loss(&probe);
        p[i] = down;
        probe.set_parameters(&p).unwrap();
        let l_down = ref_loss(&probe);
        p[i] = theta[i];
        let fd = ((l_up - l_down) / (Dd::new(up) - Dd::new(down))).to_f64();
        let a = analytic[i];
        if a.abs() < floor {
            report.max_absolute = report.max_absolute.max((a - fd).abs());
        } else {
            report.max_relative = report.max_relative.max((a - fd).abs() / a.abs().max(fd.abs()));
        }
    }
    report
}
