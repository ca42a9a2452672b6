use ndarray::{array, Array2};
use np2m2::kernel::predict;
use np2m2::rng::rng_from;
use np2m2::shift::{
    apply_bankruptcy, apply_feature_linear, apply_feature_simulated, apply_label_flip, label_flip_probabilities,
    simulated_candidates,
};
use np2m2::{gen_circles, Dataset, FlipRule, KernelModel, KernelSpec, MapSpec, PerformativeMask};
use rand::Rng;
use rand_distr::StandardNormal;

fn rbf_model(data: &Dataset) -> KernelModel {
    let coeffs: Vec<f64> = data.labels().iter().map(|y| 0.1 * y).collect();
    KernelModel::new(data.augment(), coeffs, KernelSpec::rbf(0.3).unwrap()).unwrap()
}

#[test]
fn simulated_displacement_never_exceeds_d() {
    let base = gen_circles(40, 0.2, 1).unwrap();
    let model = rbf_model(&base);
    for &d in &[0.05, 0.3, 0.7, 2.0] {
        let out = apply_feature_simulated(&base, &model, d, 50, 17).unwrap();
        for i in 0..base.n_rows() {
            let moved = (&out.row(i) - &base.row(i)).mapv(|v| v * v).sum().sqrt();
            assert!(moved <= d, "row {i} moved {moved} > {d}");
        }
        assert_eq!(out.labels(), base.labels());
    }
}

#[test]
fn simulated_never_raises_the_score() {
    let base = gen_circles(30, 0.2, 2).unwrap();
    let model = rbf_model(&base);
    let out = apply_feature_simulated(&base, &model, 0.5, 30, 4).unwrap();
    let before = predict(&model, base.augment().view()).unwrap();
    let after = predict(&model, out.augment().view()).unwrap();
    for (a, b) in after.iter().zip(&before) {
        assert!(a <= b);
    }
}

#[test]
fn single_row_takes_argmin_over_enumerated_candidates() {
    let base = Dataset::new(array![[0.2, -0.1]], vec![1.0]).unwrap();
    let support = array![[0.0, 0.0, 1.0], [0.5, 0.5, 1.0]];
    let model = KernelModel::new(support, vec![1.0, -0.7], KernelSpec::rbf(0.4).unwrap()).unwrap();
    let seed = 99;
    let out = apply_feature_simulated(&base, &model, 0.3, 5, seed).unwrap();
    let candidates = simulated_candidates(&[0.2, -0.1], 0, 0.3, 5, seed);
    assert_eq!(candidates.len(), 6);
    let scored: Vec<f64> = candidates
        .iter()
        .map(|c| model.decision(ndarray::ArrayView1::from(&[c[0], c[1], 1.0][..])).unwrap())
        .collect();
    let best = (0..6).fold(0, |b, i| if scored[i] < scored[b] { i } else { b });
    assert_eq!(out.row(0).to_vec(), candidates[best]);
}

#[test]
fn zero_d_maps_are_identities() {
    let base = gen_circles(20, 0.1, 3).unwrap();
    let model = rbf_model(&base);
    assert_eq!(apply_feature_simulated(&base, &model, 0.0, 10, 1).unwrap(), base);
    assert_eq!(apply_feature_linear(&base, &[0.3, -2.0], 0.0).unwrap(), base);
    let linear = MapSpec::feature_linear(0.0);
    assert_eq!(linear.apply(&base, &model, 5).unwrap(), base);
}

#[test]
fn feature_linear_hand_case() {
    let base = Dataset::new(array![[3.0, 4.0]], vec![1.0]).unwrap();
    let out = apply_feature_linear(&base, &[1.0, 0.0], 1.0).unwrap();
    assert_eq!(out.features(), &array![[2.0, 4.0]]);
}

#[test]
fn label_flip_frequency_matches_closed_form() {
    // Three points; the middle positive one has p* strictly inside (0, 1).
    let base = Dataset::new(array![[1.0], [0.4], [-1.0]], vec![1.0, 1.0, -1.0]).unwrap();
    let model = KernelModel::new(array![[1.0, 0.0]], vec![1.0], KernelSpec::linear()).unwrap();
    for rule in [FlipRule::Retain, FlipRule::Flip] {
        for &d in &[0.0, 5.0, 10.0] {
            let p = label_flip_probabilities(&base, &model, d, rule).unwrap();
            let reps = 10_000;
            let flips = (0..reps)
                .filter(|&s| apply_label_flip(&base, &model, d, rule, s).unwrap().labels()[1] < 0.0)
                .count();
            let freq = flips as f64 / reps as f64;
            assert!((freq - p[1]).abs() <= 0.01, "{rule:?} d={d}: {freq} vs {}", p[1]);
        }
    }
}

#[test]
fn label_flip_closed_form_values() {
    let base = Dataset::new(array![[1.0], [0.5], [-1.0], [-0.2]], vec![1.0, 1.0, -1.0, 1.0]).unwrap();
    let model = KernelModel::new(array![[1.0, 0.0]], vec![1.0], KernelSpec::linear()).unwrap();
    let p = label_flip_probabilities(&base, &model, 10.0, FlipRule::Flip).unwrap();
    assert!((p[0] - 0.9999546).abs() < 1e-7);
    assert_eq!(p[3], 0.0, "misclassified points never flip");
    let half = label_flip_probabilities(&base, &model, 0.0, FlipRule::Retain).unwrap();
    assert_eq!(&half[..3], &[0.5, 0.5, 0.5]);
}

#[test]
fn bankruptcy_keeps_non_performative_columns() {
    let mut rng = rng_from(8);
    let x = Array2::from_shape_fn((30, 4), |_| rng.sample::<f64, _>(StandardNormal));
    let labels = (0..30).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
    let base = Dataset::new(x, labels).unwrap();
    let model = rbf_model(&base);
    let mask = PerformativeMask::from_indices(4, &[1, 2]).unwrap();
    let spec = MapSpec::bankruptcy(0.5, 14.0, mask.clone());
    let out = apply_bankruptcy(&base, &model, &spec, &mask, 3).unwrap();
    for i in 0..30 {
        assert_eq!(out.row(i)[0].to_bits(), base.row(i)[0].to_bits());
        assert_eq!(out.row(i)[3].to_bits(), base.row(i)[3].to_bits());
        if base.labels()[i] < 0.0 {
            assert_eq!(out.labels()[i], -1.0);
        }
    }
}

#[test]
fn bankruptcy_with_very_negative_intensity_is_inert() {
    let base = gen_circles(15, 0.1, 5).unwrap();
    let model = rbf_model(&base);
    let mask = PerformativeMask::all(2).unwrap();
    let spec = MapSpec::bankruptcy(0.0, -1e6, mask.clone()).with_flip_rule(FlipRule::Flip);
    let out = apply_bankruptcy(&base, &model, &spec, &mask, 1).unwrap();
    assert_eq!(out, base);
    assert_eq!(np2m2::shift::bankruptcy_intensity(100.0), 14.0);
}
