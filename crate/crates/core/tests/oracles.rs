//! Derivatives, spectra and GD steps against independently derived values.

use approx::assert_relative_eq;
use gdmap::dynamics::{dense_operator, largest_eigenvalue, sharpness, sharpness_power};
use gdmap::experiments::InitScheme;
use gdmap::landscape::{sample_minimum, spectrum_at};
use gdmap::par::substream;
use gdmap::{Activation, Architecture, DataBatch, LossKind, ParamVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn two_neuron() -> (Architecture, DataBatch) {
    (Architecture::two_neuron(), DataBatch::scalar_pair(1.0, 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // L = (1 - xy)^2 / 2, grad = -(1 - xy)(y, x),
    // H = [[y^2, 2xy - 1], [2xy - 1, x^2]].
    #[test]
    fn two_neuron_closed_forms(x in -3.0..3.0f64, y in -3.0..3.0f64, eta in 0.01..2.0f64) {
        let (arch, data) = two_neuron();
        let theta = ParamVector(vec![x, y]);
        let r = 1.0 - x * y;
        prop_assert!((arch.loss(&theta, &data).unwrap() - 0.5 * r * r).abs() < 1e-12);
        let g = arch.gradient(&theta, &data).unwrap();
        prop_assert!((g.0[0] + r * y).abs() < 1e-12 && (g.0[1] + r * x).abs() < 1e-12);
        let h = arch.hessian(&theta, &data).unwrap();
        let want = [[y * y, 2.0 * x * y - 1.0], [2.0 * x * y - 1.0, x * x]];
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((h[(i, j)] - want[i][j]).abs() < 1e-12);
            }
        }
        let next = arch.gd_step(&theta, &data, eta).unwrap();
        prop_assert!((next.0[0] - (x + eta * r * y)).abs() < 1e-12);
        prop_assert!((next.0[1] - (y + eta * r * x)).abs() < 1e-12);
    }

    #[test]
    fn linear_hessian_matches_finite_differences(
        dims in prop::collection::vec(1usize..4, 2..5),
        seed in 0u64..1000,
    ) {
        let arch = Architecture::linear(dims.clone()).unwrap();
        let (d0, dh) = (dims[0], *dims.last().unwrap());
        let mut rng = substream(seed, 0);
        let data = DataBatch::new(
            DMatrix::from_fn(d0, 5, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)),
            DMatrix::from_fn(dh, 5, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)),
        ).unwrap();
        let theta = InitScheme::Gaussian { sigma: 0.7 }.sample(&arch, &mut rng);
        let analytic = arch.hessian(&theta, &data).unwrap();
        let fd = arch.finite_difference_hessian(&theta, &data).unwrap();
        let scale = analytic.norm().max(1.0);
        prop_assert!((analytic - fd).norm() < 1e-6 * scale);
    }

    #[test]
    fn power_iteration_agrees_with_dense_eigensolve(seed in 0u64..500, n in 2usize..12) {
        let mut rng = substream(seed, 1);
        let a = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let sym = (&a + a.transpose()) * 0.5;
        let dense = sym.clone().symmetric_eigen().eigenvalues.max();
        match largest_eigenvalue(dense_operator(&sym), n, 1e-10, 200_000) {
            Ok(r) => prop_assert!((r.value - dense).abs() < 1e-6 * dense.abs().max(1.0), "{} vs {dense}", r.value),
            // Near-degenerate top pairs may stagnate; that must be reported, never a wrong value.
            Err(gdmap::Error::PowerIterationStagnated { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn curvature_term_vanishes_at_global_minima() {
    let arch = Architecture::linear(vec![2, 3, 2]).unwrap();
    let data = DataBatch::new(
        DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 2.0, -1.0, 0.5, 1.0, -1.0, 0.0]),
        DMatrix::from_row_slice(2, 4, &[0.3, -1.0, 2.0, 0.1, 1.0, 0.2, -0.5, 0.7]),
    )
    .unwrap();
    let m = sample_minimum(&arch, &data, &mut substream(3, 0)).unwrap();
    let (gauss_newton, curvature) = arch.hessian_terms(&m.theta, &data).unwrap();
    assert!(curvature.norm() < 1e-9 * gauss_newton.norm(), "{}", curvature.norm());
    let s = spectrum_at(&arch, &m.theta, &data).unwrap();
    assert_eq!(s.n_negative, 0);
}

#[test]
fn matrix_free_sharpness_matches_dense() {
    for (act, seed) in [(Activation::Gelu, 1), (Activation::Tanh, 2), (Activation::Sigmoid, 3)] {
        let arch = Architecture::new(vec![3, 5, 4, 2], act, true, LossKind::MSE).unwrap();
        let mut rng = substream(seed, 0);
        let data = DataBatch::new(
            DMatrix::from_fn(3, 6, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)),
            DMatrix::from_fn(2, 6, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)),
        )
        .unwrap();
        let theta = InitScheme::He.sample(&arch, &mut rng);
        let dense = sharpness(&arch, &theta, &data).unwrap();
        let power = sharpness_power(&arch, &theta, &data).unwrap();
        assert_relative_eq!(power.value, dense, max_relative = 1e-5);
    }
}

#[test]
fn softmax_cross_entropy_gradient_at_uniform_prediction() {
    // One input, zero weights: p = (1/2, 1/2) and dL/dz = p - y, so the
    // output-layer bias gradient is (-1/2, 1/2) for label class 0.
    let arch = Architecture::new(vec![1, 2], Activation::Identity, true, LossKind::SoftmaxCrossEntropy).unwrap();
    let data = DataBatch::new(DMatrix::from_element(1, 1, 0.7), DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
    let theta = ParamVector::zeros(arch.param_count());
    assert_relative_eq!(arch.loss(&theta, &data).unwrap(), std::f64::consts::LN_2, epsilon = 1e-14);
    let g = arch.gradient(&theta, &data).unwrap();
    let tail = &g.0[g.len() - 2..];
    assert_relative_eq!(tail[0], -0.5, epsilon = 1e-14);
    assert_relative_eq!(tail[1], 0.5, epsilon = 1e-14);
}

#[test]
fn dense_operator_applies_the_matrix() {
    let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
    let v = DVector::from_vec(vec![1.0, -1.0]);
    assert_eq!(dense_operator(&m)(&v), DVector::from_vec(vec![1.0, -2.0]));
}
