//! Cross-model agreements and structural properties of the networks.

use std::sync::Arc;

use funcnet_core::activation::Activation;
use funcnet_core::baselines::dense::{DenseLayer, DenseStack};
use funcnet_core::baselines::{FlmModel, FnnModel};
use funcnet_core::bspline::BsplineBasis;
use funcnet_core::data::{CurveSet, ResponseKind};
use funcnet_core::fbnn::{FbnnArch, FbnnLayer, FbnnModel, FbnnOutputLayer};
use funcnet_core::fdnn::{ContinuousLayer, FdnnArch, FdnnModel, FunctionalOutputLayer};
use funcnet_core::grid::{BivariateGridFunction, Grid, GridFunction};
use funcnet_core::linalg::Matrix;
use funcnet_core::model::{Predictor, Trainable};
use funcnet_core::simulate::{sample_gp_matrix, MaternParams};
use funcnet_core::training::{batch_loss, LossKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(m: usize) -> Arc<Grid> {
    Arc::new(Grid::uniform(m, 0.0, 1.0).unwrap())
}

fn curves(n: usize, m: usize, seed: u64) -> CurveSet {
    let g = unit(m);
    let x = sample_gp_matrix(n, &g, &MaternParams::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    CurveSet::new(g, vec![x], y, ResponseKind::Continuous).unwrap()
}

fn random_fbnn(seed: u64, act: Activation) -> FbnnModel {
    let basis = BsplineBasis::uniform(5, 4).unwrap();
    let arch = FbnnArch::new(1, unit(21), Activation::Linear)
        .hidden_layer(2, unit(11), act)
        .hidden_layer(3, unit(13), act)
        .with_shared_basis(basis)
        .with_init_gain(3.0);
    let mut model = FbnnModel::init(&arch, seed).unwrap();
    // Random biases too, so every parameter block is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let p: Vec<f64> = model
        .parameters()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    model.set_parameters(&p).unwrap();
    model
}

#[test]
fn fbnn_and_reconstructed_fdnn_agree() {
    for seed in 0..5 {
        let fbnn = random_fbnn(
            seed,
            if seed % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::Sigmoid
            },
        );
        let fdnn = fbnn.to_fdnn().unwrap();
        let data = curves(100, 21, 100 + seed);
        let a = fbnn.predict(&data).unwrap();
        let b = fdnn.predict(&data).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8, "seed {seed}: {x} vs {y}");
        }
    }
}

/// Maps FDNN partials to FBNN coefficient partials through the chain rule
/// `∂L/∂W_cd = Σ_s Σ_t ∂L/∂w(s,t) · v_c(s) v_d(t)`.
fn fdnn_partials_to_coefficients(fbnn: &FbnnModel, partials: &funcnet_core::fdnn::FdnnGradients) -> Vec<f64> {
    let mut out = Vec::new();
    for (layer, g) in fbnn.hidden().iter().zip(&partials.hidden) {
        let vb = layer.bias_basis().design(layer.out_grid()).unwrap();
        let vs = layer.out_basis().design(layer.out_grid()).unwrap();
        let vt = layer.in_basis().design(layer.in_grid()).unwrap();
        for b in &g.biases {
            out.extend(vb.tr_mul_vec(b));
        }
        for w in &g.weights {
            let left = vs.matmul(true, w, false);
            out.extend_from_slice(left.matmul(false, &vt, false).as_slice());
        }
    }
    let vo = fbnn.output().in_basis().design(fbnn.output().in_grid()).unwrap();
    for w in &partials.output.weights {
        out.extend(vo.tr_mul_vec(w));
    }
    out.push(partials.output.bias);
    out
}

#[test]
fn fbnn_gradients_equal_fdnn_gradients_through_reconstruction() {
    for seed in 0..5 {
        let fbnn = random_fbnn(seed, Activation::Tanh);
        let fdnn = fbnn.to_fdnn().unwrap();
        let data = curves(12, 21, 200 + seed);
        let kind = LossKind::SquaredError;

        let (yb, cb) = fbnn.forward_batch(&data).unwrap();
        let (_, db) = batch_loss(kind, &yb, data.responses()).unwrap();
        let direct = fbnn.gradient_vector(&fbnn.backward_batch(&cb, &db).unwrap());

        let (yd, cd) = fdnn.forward_batch(&data).unwrap();
        let (_, dd) = batch_loss(kind, &yd, data.responses()).unwrap();
        let partials = fdnn.backward_batch(&cd, &dd).unwrap().to_partials(&fdnn);
        let mapped = fdnn_partials_to_coefficients(&fbnn, &partials);

        assert_eq!(direct.len(), mapped.len());
        let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, (a, b)) in direct.iter().zip(&mapped).enumerate() {
            assert!(
                (a - b).abs() <= 1e-6 * scale.max(1.0),
                "seed {seed} param {i}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn single_coefficient_reconstructs_a_basis_product() {
    let basis = BsplineBasis::uniform(5, 4).unwrap();
    let (s, t) = (unit(11), unit(21));
    let (c, d) = (1, 3);
    let mut w = Matrix::zeros(5, 5);
    w.set(c, d, 1.0);
    let layer = FbnnLayer::new(
        t.clone(),
        s.clone(),
        1,
        1,
        basis.clone(),
        basis.clone(),
        basis.clone(),
        Matrix::zeros(1, 5),
        vec![w],
        Activation::Tanh,
    )
    .unwrap();
    let surface = layer.reconstruct_weight(0, 0).unwrap();
    for (i, &si) in s.points().iter().enumerate() {
        for (j, &tj) in t.points().iter().enumerate() {
            let want = basis.eval(si).unwrap()[c] * basis.eval(tj).unwrap()[d];
            assert!((surface.values().get(i, j) - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn parameter_counts_for_a_single_continuous_neuron() {
    let fbnn = FbnnArch::new(1, unit(200), Activation::Linear).hidden_layer(1, unit(50), Activation::Tanh);
    let fdnn = FdnnArch::new(1, unit(200), Activation::Linear).hidden_layer(1, unit(50), Activation::Tanh);
    // B + C·D + output basis + scalar bias.
    assert_eq!(FbnnModel::zeros(&fbnn).unwrap().parameter_count(), 7 + 49 + 7 + 1);
    // Bias on s, surface on s × t, output weight on s, scalar bias.
    assert_eq!(
        FdnnModel::zeros(&fdnn).unwrap().parameter_count(),
        50 + 50 * 200 + 50 + 1
    );
}

/// Reorders the neurons of hidden layer `l` by `perm` and the inputs of the next layer to match.
fn permute_fbnn(model: &FbnnModel, l: usize, perm: &[usize]) -> FbnnModel {
    let mut hidden: Vec<FbnnLayer> = model.hidden().to_vec();
    let rebuild = |layer: &FbnnLayer, bias: Matrix, weights: Vec<Matrix>| {
        FbnnLayer::new(
            layer.in_grid().clone(),
            layer.out_grid().clone(),
            layer.j_in(),
            layer.k_out(),
            layer.bias_basis().clone(),
            layer.out_basis().clone(),
            layer.in_basis().clone(),
            bias,
            weights,
            layer.activation(),
        )
        .unwrap()
    };
    let this = &hidden[l];
    let bias = Matrix::from_fn(this.k_out(), this.bias_coef().cols(), |k, b| {
        this.bias_coef().get(perm[k], b)
    });
    let mut weights = Vec::new();
    for &pk in perm.iter().take(this.k_out()) {
        for j in 0..this.j_in() {
            weights.push(this.weight_coef(j, pk).clone());
        }
    }
    hidden[l] = rebuild(this, bias, weights);
    let output = if l + 1 < hidden.len() {
        let next = &hidden[l + 1];
        let mut weights = Vec::new();
        for k in 0..next.k_out() {
            for &pj in perm.iter().take(next.j_in()) {
                weights.push(next.weight_coef(pj, k).clone());
            }
        }
        hidden[l + 1] = rebuild(next, next.bias_coef().clone(), weights);
        model.output().clone()
    } else {
        let o = model.output();
        let w = Matrix::from_fn(o.j_in(), o.weight_coef().cols(), |j, c| o.weight_coef().get(perm[j], c));
        FbnnOutputLayer::new(o.in_grid().clone(), o.in_basis().clone(), o.bias(), w, o.activation()).unwrap()
    };
    FbnnModel::from_layers(model.input_count(), model.input_grid().clone(), hidden, output).unwrap()
}

#[test]
fn fbnn_is_invariant_to_neuron_order() {
    let model = random_fbnn(4, Activation::Tanh);
    let data = curves(30, 21, 9);
    let base = model.predict(&data).unwrap();
    for (l, perm) in [(0, vec![1, 0]), (1, vec![2, 0, 1]), (1, vec![1, 2, 0])] {
        let p = permute_fbnn(&model, l, &perm);
        assert_ne!(p.parameters(), model.parameters());
        let got = p.predict(&data).unwrap();
        for (a, b) in base.iter().zip(&got) {
            assert!(
                (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(1.0),
                "layer {l} perm {perm:?}: {a} vs {b}"
            );
        }
    }
}

fn linear_fdnn(seed: u64) -> FdnnModel {
    let arch = FdnnArch::new(1, unit(21), Activation::Linear)
        .hidden_layer(3, unit(11), Activation::Linear)
        .with_init_gain(2.0);
    // Biases start at zero.
    FdnnModel::init(&arch, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_fdnn_is_linear_in_its_input(seed in 0u64..500, alpha in -5.0f64..5.0, beta in -5.0f64..5.0) {
        let model = linear_fdnn(seed);
        let g = unit(21);
        let x = sample_gp_matrix(2, &g, &MaternParams::default(), seed).unwrap();
        let f = |v: Vec<f64>| {
            let d = CurveSet::new(g.clone(), vec![Matrix::from_vec(1, 21, v).unwrap()], vec![0.0], ResponseKind::Continuous).unwrap();
            model.predict(&d).unwrap()[0]
        };
        let (x1, x2) = (x.row(0).to_vec(), x.row(1).to_vec());
        let combo: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + beta * b).collect();
        let (y1, y2) = (f(x1), f(x2));
        let y = f(combo);
        let scale = 1.0 + (alpha * y1).abs() + (beta * y2).abs();
        prop_assert!((y - (alpha * y1 + beta * y2)).abs() <= 1e-10 * scale);
    }
}

/// Copies every surface and function from `model` onto hidden grids of twice
/// the resolution, taking the nearest coarse point for each fine point.
fn refine_s_grid(model: &FdnnModel, fine: &Arc<Grid>) -> FdnnModel {
    let nearest = |coarse: &Grid, s: f64| {
        let p = coarse.points();
        (0..p.len())
            .min_by(|&a, &b| (p[a] - s).abs().total_cmp(&(p[b] - s).abs()))
            .unwrap()
    };
    let mut hidden = Vec::new();
    let mut in_grid = model.input_grid().clone();
    for layer in model.hidden() {
        let coarse_out = layer.out_grid().clone();
        let coarse_in = layer.in_grid().clone();
        let map_out: Vec<usize> = fine.points().iter().map(|&s| nearest(&coarse_out, s)).collect();
        let map_in: Vec<usize> = in_grid.points().iter().map(|&t| nearest(&coarse_in, t)).collect();
        let biases = layer
            .biases()
            .iter()
            .map(|b| GridFunction::new(fine.clone(), map_out.iter().map(|&i| b.values()[i]).collect()).unwrap())
            .collect();
        let weights = layer
            .weights()
            .iter()
            .map(|w| {
                let v = Matrix::from_fn(fine.len(), in_grid.len(), |i, j| w.values().get(map_out[i], map_in[j]));
                BivariateGridFunction::new(fine.clone(), in_grid.clone(), v).unwrap()
            })
            .collect();
        hidden.push(
            ContinuousLayer::new(
                in_grid.clone(),
                fine.clone(),
                layer.j_in(),
                layer.k_out(),
                biases,
                weights,
                layer.activation(),
            )
            .unwrap(),
        );
        in_grid = fine.clone();
    }
    let o = model.output();
    let map: Vec<usize> = fine.points().iter().map(|&s| nearest(o.in_grid(), s)).collect();
    let weights = o
        .weights()
        .iter()
        .map(|w| GridFunction::new(fine.clone(), map.iter().map(|&i| w.values()[i]).collect()).unwrap())
        .collect();
    let output = FunctionalOutputLayer::new(fine.clone(), o.bias(), weights, o.activation()).unwrap();
    FdnnModel::from_layers(model.input_count(), model.input_grid().clone(), hidden, output).unwrap()
}

#[test]
fn doubling_the_s_grid_barely_moves_predictions() {
    // Smooth weight surfaces, as a trained model would have.
    let (t, s) = (unit(200), unit(50));
    let biases = (0..2)
        .map(|k| GridFunction::from_fn(s.clone(), |v| 0.3 * ((k + 1) as f64 * v).sin()).unwrap())
        .collect();
    let weights = (0..2)
        .map(|k| {
            BivariateGridFunction::from_fn(s.clone(), t.clone(), |a, b| {
                2.0 * ((k + 1) as f64 * std::f64::consts::PI * (a + b)).sin()
            })
            .unwrap()
        })
        .collect();
    let hidden = ContinuousLayer::new(t.clone(), s.clone(), 1, 2, biases, weights, Activation::Tanh).unwrap();
    let out_w = (0..2)
        .map(|k| GridFunction::from_fn(s.clone(), |v| if k == 0 { 1.0 + v } else { (3.0 * v).cos() }).unwrap())
        .collect();
    let output = FunctionalOutputLayer::new(s.clone(), 0.2, out_w, Activation::Linear).unwrap();
    let model = FdnnModel::from_layers(1, t.clone(), vec![hidden], output).unwrap();
    let fine = refine_s_grid(&model, &unit(100));
    let data = curves(50, 200, 77);
    let a = model.predict(&data).unwrap();
    let b = fine.predict(&data).unwrap();
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let rel = rms(&diff) / rms(&a);
    assert!(rel < 0.05, "relative RMS change {rel}");
}

#[test]
fn projection_is_identity_for_curves_in_the_basis_span() {
    let arch = FbnnArch::new(1, unit(60), Activation::Linear).hidden_layer(2, unit(20), Activation::Tanh);
    let model = FbnnModel::init(&arch, 5).unwrap();
    let basis = model.input_basis().clone();
    let other = Arc::new(Grid::from_points((0..45).map(|i| (i as f64 / 44.0).powf(1.3)).collect()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coefs: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..basis.n_basis()).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let eval = |g: &Grid| {
        let v = basis.design(g).unwrap();
        let rows: Vec<f64> = coefs.iter().flat_map(|c| v.mul_vec(c)).collect();
        Matrix::from_vec(coefs.len(), g.len(), rows).unwrap()
    };
    let y = vec![0.0; 8];
    let off = CurveSet::new(other.clone(), vec![eval(&other)], y.clone(), ResponseKind::Continuous).unwrap();
    let on = CurveSet::new(unit(60), vec![eval(&unit(60))], y, ResponseKind::Continuous).unwrap();
    let projected = model.project_input(&off).unwrap();
    let a = model.predict(&projected).unwrap();
    let b = model.predict(&on).unwrap();
    for (x, z) in a.iter().zip(&b) {
        assert!((x - z).abs() <= 1e-8);
    }
    assert!(model.predict(&off).is_err());
}

#[test]
fn fnn_without_hidden_layers_matches_flm() {
    let basis = BsplineBasis::uniform(7, 4).unwrap();
    let g = unit(80);
    let beta = Matrix::from_vec(1, 7, vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1, 0.2]).unwrap();
    let alpha = 0.37;
    let flm = FlmModel::from_parts(
        basis.clone(),
        alpha,
        beta.clone(),
        0.0,
        funcnet_core::baselines::flm::Link::Identity,
    )
    .unwrap();
    let w = basis.design(&g).unwrap().mul_vec(beta.row(0));
    let dense = DenseStack::new(vec![DenseLayer::new(
        Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        vec![0.0],
        Activation::Linear,
    )
    .unwrap()])
    .unwrap();
    let fnn = FnnModel::new(
        g.clone(),
        1,
        vec![alpha],
        vec![GridFunction::new(g.clone(), w).unwrap()],
        Activation::Linear,
        dense,
    )
    .unwrap();
    let data = curves(40, 80, 3);
    let a = flm.predict(&data).unwrap();
    let b = fnn.predict(&data).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn unpenalized_flm_residuals_are_orthogonal_to_the_design() {
    let basis = BsplineBasis::uniform(7, 4).unwrap();
    let data = curves(300, 100, 21);
    let idx: Vec<usize> = (0..300).collect();
    let flm = FlmModel::fit(&data, &idx, basis.clone(), 0.0).unwrap();
    let yhat = flm.predict(&data).unwrap();
    let r: Vec<f64> = data.responses().iter().zip(&yhat).map(|(y, p)| y - p).collect();
    // Design columns: intercept and the moments ∫ v_c(t) x_i(t) dt.
    let v = basis.design(data.grid()).unwrap();
    let q = data.grid().weights();
    let mut cols = vec![vec![1.0; 300]];
    for c in 0..7 {
        cols.push(
            (0..300)
                .map(|i| {
                    data.curve_values(i, 0)
                        .iter()
                        .enumerate()
                        .map(|(j, x)| q[j] * v.get(j, c) * x)
                        .sum()
                })
                .collect(),
        );
    }
    for (c, col) in cols.iter().enumerate() {
        let dot: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
        let norm = col.iter().map(|a| a * a).sum::<f64>().sqrt() * r.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot.abs() <= 1e-8 * norm, "column {c}: {dot:e}");
    }
}

#[test]
fn forward_passes_are_deterministic() {
    let model = random_fbnn(2, Activation::Sigmoid);
    let data = curves(10, 21, 4);
    assert_eq!(model.predict(&data).unwrap(), model.predict(&data).unwrap());
    let fdnn = model.to_fdnn().unwrap();
    assert_eq!(fdnn.predict(&data).unwrap(), fdnn.predict(&data).unwrap());
}
