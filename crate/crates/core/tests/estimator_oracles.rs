//! Estimators checked against slow, independent reference implementations.

mod common;

use brnn_core::detection::knn_density;
use brnn_core::linalg::{sym_eig, Matrix, Rng};
use brnn_core::posterior::{init_ensemble, validation_log_likelihood, RnnModel};
use brnn_core::rnn::{init_params, run_sequence, Activation};
use common::*;

#[test]
fn mahalanobis_matches_explicit_inverse() {
    let worst = mahalanobis_sweep(300);
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn predictive_moments_match_two_pass_oracle() {
    let worst = moments_sweep(100);
    assert!(worst <= 1e-10, "{worst:e}");
}

#[test]
fn ldr_matches_brute_force_exactly() {
    assert_eq!(ldr_mismatches(), 0);
}

#[test]
fn knn_density_excludes_a_coincident_sample() {
    let samples = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![0.0]]).unwrap();
    // At x = 0 sample 0 is skipped, sample 3 (distance 0, floored) remains.
    let f = knn_density(&[0.0], &samples, 2, 1e-3).unwrap();
    assert_eq!(f, 2.0 / (1e-3 + 1.0));
}

#[test]
fn percentile_matches_sort_oracle() {
    assert_eq!(percentile_mismatches(1000), 0);
}

#[test]
fn symmetric_eigenvalues_are_characteristic_roots() {
    let mut rng = Rng::seed_from_u64(6);
    for _ in 0..50 {
        let a = random_matrix(&mut rng, 5, 5);
        let mut s = a.transpose();
        s.add_assign(&a).unwrap();
        let eig = sym_eig(&s).unwrap();
        let from_roots = poly_from_roots(&eig.values);
        let direct = char_poly(&s);
        let scale = s.max_abs().powi(5).max(1.0);
        for (p, q) in from_roots.iter().zip(&direct) {
            assert!((p - q).abs() <= 1e-9 * scale, "{p} vs {q}");
        }
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        for k in 0..5 {
            let v = eig.vectors.col(k);
            let sv = s.matvec(&v).unwrap();
            for i in 0..5 {
                assert!((sv[i] - eig.values[k] * v[i]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn validation_log_likelihood_matches_naive_sum() {
    let params = init_params(3, 4, Activation::Tanh, 8).unwrap();
    let model = RnnModel::new(params, 0.2, 1e-4, 1.0, 100, Some(3.0)).unwrap();
    let mut rng = Rng::seed_from_u64(9);
    let series = random_matrix(&mut rng, 12, 3);
    let (n, seed) = (16, 4);
    let got = validation_log_likelihood(&model, &series, n, seed).unwrap();

    let inputs =
        Matrix::from_rows(&(0..11).map(|t| series.row(t).to_vec()).collect::<Vec<_>>()).unwrap();
    let ens = init_ensemble(&model, n, seed).unwrap();
    let preds: Vec<Matrix> = ens
        .masks()
        .iter()
        .map(|mask| run_sequence(&model.params, mask, &inputs).unwrap())
        .collect();
    let tau = model.tau;
    let mut oracle = 0.0;
    for t in 0..11 {
        let mut density = 0.0;
        for p in &preds {
            let sq: f64 = (0..3)
                .map(|l| (p[(t, l)] - series[(t + 1, l)]).powi(2))
                .sum();
            density += (tau / (2.0 * std::f64::consts::PI)).powf(1.5) * (-0.5 * tau * sq).exp();
        }
        oracle += (density / n as f64).ln();
    }
    assert!(
        (got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
        "{got} vs {oracle}"
    );
}
