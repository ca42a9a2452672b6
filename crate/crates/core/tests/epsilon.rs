use ndarray::array;
use np2m2::kernel::{model_dot, model_norm};
use np2m2::rrm::{estimate_epsilon_initial, estimate_epsilon_step};
use np2m2::{gen_circles, Dataset, KernelModel, KernelSpec, ViolatorFilter};

fn explicit(w: &[f64]) -> KernelModel {
    let width = w.len();
    let mut support = ndarray::Array2::zeros((1, width));
    for (j, v) in w.iter().enumerate() {
        support[[0, j]] = *v;
    }
    KernelModel::new(support, vec![1.0], KernelSpec::linear()).unwrap()
}

fn rbf_model(data: &Dataset, scale: f64) -> KernelModel {
    let coeffs = data.labels().iter().enumerate().map(|(i, y)| scale * y * (1.0 + 0.1 * i as f64)).collect();
    KernelModel::new(data.augment(), coeffs, KernelSpec::rbf(0.4).unwrap()).unwrap()
}

#[test]
fn identical_datasets_give_exact_zero() {
    let data = gen_circles(25, 0.2, 1).unwrap();
    let a = rbf_model(&data, 0.3);
    let b = rbf_model(&data, 0.1);
    assert_eq!(estimate_epsilon_initial(&data, &data, &a).unwrap(), 0.0);
    for filter in [ViolatorFilter::Previous, ViolatorFilter::Current] {
        assert_eq!(estimate_epsilon_step(&data, &data, &a, &b, filter).unwrap(), Some(0.0));
    }
}

#[test]
fn initial_estimator_hand_case() {
    // theta = (2, 1) on the augmented point (x, 1): f(x) = 2x + 1.
    let theta = explicit(&[2.0, 1.0]);
    let d0 = Dataset::new(array![[1.0], [-1.0]], vec![1.0, -1.0]).unwrap();
    let d1 = Dataset::new(array![[1.0], [-1.0]], vec![1.0, 1.0]).unwrap();
    // D0 margins: 3, 1 -> mean 2. D1 margins: 3, -1 -> mean 1. |2 - 1| / 5.
    assert!((estimate_epsilon_initial(&d0, &d1, &theta).unwrap() - 0.2).abs() <= 1e-15);
}

#[test]
fn initial_estimator_is_inverse_homogeneous() {
    let d0 = gen_circles(20, 0.2, 2).unwrap();
    let d1 = gen_circles(20, 0.2, 3).unwrap();
    let theta = rbf_model(&d0, 0.2);
    let base = estimate_epsilon_initial(&d0, &d1, &theta).unwrap();
    assert!(base > 0.0);
    for c in [0.5, 3.0, 40.0] {
        let scaled = estimate_epsilon_initial(&d0, &d1, &theta.scaled(c)).unwrap();
        assert!((scaled - base / c).abs() <= 1e-10 * (base / c).max(1.0), "c={c}");
    }
}

#[test]
fn zero_model_is_an_estimation_error() {
    let d = gen_circles(5, 0.1, 0).unwrap();
    let zero = KernelModel::zero(3, KernelSpec::linear());
    assert!(estimate_epsilon_initial(&d, &d, &zero).is_err());
}

#[test]
fn doubled_model_matches_direct_formula() {
    let x = array![[0.3, -0.2], [0.8, 0.5], [-0.4, 0.1], [0.05, 0.05], [-0.9, -0.3]];
    let d_prev = Dataset::new(x.clone(), vec![1.0, -1.0, 1.0, -1.0, 1.0]).unwrap();
    let d_cur = Dataset::new(x + 0.1, vec![1.0, 1.0, -1.0, -1.0, 1.0]).unwrap();
    let prev = explicit(&[0.6, -0.4, 0.2]);
    let cur = prev.scaled(2.0);
    let w = prev.explicit_weights().unwrap();
    let f = |d: &Dataset, i: usize| {
        let r = d.row(i);
        w[0] * r[0] + w[1] * r[1] + w[2]
    };
    let side = |d: &Dataset| {
        let mut s = 0.0;
        for i in 0..d.n_rows() {
            let y = d.labels()[i];
            if y * f(d, i) < 1.0 {
                s += y * (f(d, i) - 2.0 * f(d, i));
            }
        }
        s / d.n_rows() as f64
    };
    let want = (side(&d_prev) - side(&d_cur)).abs() / model_dot(&prev, &prev).unwrap();
    let got = estimate_epsilon_step(&d_prev, &d_cur, &prev, &cur, ViolatorFilter::Previous)
        .unwrap()
        .unwrap();
    assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
}

#[test]
fn confident_points_are_not_violators() {
    // y f = 1.5 under theta_prev: contributes to neither sum.
    let prev = explicit(&[1.5, 0.0]);
    let cur = explicit(&[0.5, 0.0]);
    let d_prev = Dataset::new(array![[1.0]], vec![1.0]).unwrap();
    let d_cur = Dataset::new(array![[1.0]], vec![1.0]).unwrap().with_features(array![[-1.0]]).unwrap();
    // On d_cur the point is a violator: y f_prev = -1.5, summand y (f_prev - f_cur) = -1.
    let got = estimate_epsilon_step(&d_prev, &d_cur, &prev, &cur, ViolatorFilter::Previous)
        .unwrap()
        .unwrap();
    assert!((got - 1.0).abs() <= 1e-15, "{got}");
}

#[test]
fn converged_models_signal_instead_of_dividing() {
    let d = gen_circles(10, 0.1, 4).unwrap();
    let m = rbf_model(&d, 0.5);
    let near = m.scaled(1.0 + 1e-12);
    assert!(model_norm(&m) > 0.0);
    assert_eq!(estimate_epsilon_step(&d, &d, &m, &near, ViolatorFilter::Previous).unwrap(), None);
}
