//! Quadrature, B-spline and contraction properties.

use std::sync::Arc;

use funcnet_core::bspline::BsplineBasis;
use funcnet_core::grid::{contract, integrate, BivariateGridFunction, Grid, GridFunction};
use proptest::prelude::*;

fn unit(m: usize) -> Arc<Grid> {
    Arc::new(Grid::uniform(m, 0.0, 1.0).unwrap())
}

#[test]
fn trapezoid_error_on_t_squared_is_quadratic_in_spacing() {
    // Exact trapezoid error for t² on [0,1] is h²/6.
    let errs: Vec<f64> = [11, 21, 41, 81]
        .iter()
        .map(|&m| {
            let f = GridFunction::from_fn(unit(m), |t| t * t).unwrap();
            let h = 1.0 / (m - 1) as f64;
            let e = integrate(&f) - 1.0 / 3.0;
            assert!((e - h * h / 6.0).abs() < 1e-14, "m={m}: error {e:e}");
            e
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 4.0).abs() < 1e-6, "ratio {ratio}");
    }
}

#[test]
fn t_squared_on_201_points() {
    let f = GridFunction::from_fn(unit(201), |t| t * t).unwrap();
    assert!((integrate(&f) - 1.0 / 3.0).abs() < 5e-6);
}

#[test]
fn contract_of_st_against_t_is_s_over_three() {
    let w = BivariateGridFunction::from_fn(unit(50), unit(200), |s, t| s * t).unwrap();
    let h = GridFunction::from_fn(unit(200), |t| t).unwrap();
    let g = contract(&w, &h).unwrap();
    for (s, v) in g.grid().points().iter().zip(g.values()) {
        assert!((v - s / 3.0).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trapezoid_is_exact_for_affine(m in 2usize..400, a in -1e3f64..1e3, b in -1e3f64..1e3, lo in 0.0f64..0.5, len in 0.01f64..0.5) {
        let g = Arc::new(Grid::uniform(m, lo, lo + len).unwrap());
        let f = GridFunction::from_fn(g, |t| a + b * t).unwrap();
        let hi = lo + len;
        let exact = a * len + b * (hi * hi - lo * lo) / 2.0;
        prop_assert!((integrate(&f) - exact).abs() <= 1e-10 * (1.0 + exact.abs() + a.abs() * len + b.abs() * len * (lo.abs() + hi.abs())));
    }

    #[test]
    fn bsplines_partition_unity(order in 1usize..6, extra in 0usize..10, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let basis = BsplineBasis::uniform(order + extra, order).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let t: f64 = rng.random_range(0.0..=1.0);
            let v = basis.eval(t).unwrap();
            prop_assert!(v.iter().all(|&x| x >= 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-10, "t={} sum={}", t, v.iter().sum::<f64>());
        }
    }

    #[test]
    fn bsplines_with_random_knots_partition_unity(order in 1usize..6, mut knots in prop::collection::vec(0.001f64..0.999, 0..8), t in 0.0f64..=1.0) {
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let basis = BsplineBasis::with_interior_knots(order, knots).unwrap();
        let v = basis.eval(t).unwrap();
        prop_assert!(v.iter().all(|&x| x >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn contract_is_bilinear(seed in any::<u64>(), alpha in -10.0f64..10.0, beta in -10.0f64..10.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (s, t) = (unit(11), unit(21));
        let mut surface = || {
            let vals: Vec<f64> = (0..11 * 21).map(|_| rng.random_range(-1.0..1.0)).collect();
            vals
        };
        let (v1, v2) = (surface(), surface());
        let hv: Vec<f64> = (0..21).map(|i| (i as f64 * 0.3).sin()).collect();
        let h = GridFunction::new(t.clone(), hv.clone()).unwrap();
        let mk = |v: &[f64]| {
            let m = funcnet_core::linalg::Matrix::from_vec(11, 21, v.to_vec()).unwrap();
            BivariateGridFunction::new(s.clone(), t.clone(), m).unwrap()
        };
        let combo: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = contract(&mk(&combo), &h).unwrap();
        let g1 = contract(&mk(&v1), &h).unwrap();
        let g2 = contract(&mk(&v2), &h).unwrap();
        for i in 0..11 {
            let rhs = alpha * g1.values()[i] + beta * g2.values()[i];
            prop_assert!((lhs.values()[i] - rhs).abs() <= 1e-12);
        }
        // Linear in h too.
        let h2v: Vec<f64> = hv.iter().map(|v| alpha * v + beta).collect();
        let ones = GridFunction::constant(t.clone(), 1.0);
        let lhs = contract(&mk(&v1), &GridFunction::new(t.clone(), h2v).unwrap()).unwrap();
        let g3 = contract(&mk(&v1), &ones).unwrap();
        for i in 0..11 {
            let rhs = alpha * g1.values()[i] + beta * g3.values()[i];
            prop_assert!((lhs.values()[i] - rhs).abs() <= 1e-12);
        }
    }
}
