//! Central finite differences against the analytic BPTT gradients.

mod common;

use brnn_core::linalg::Rng;
use brnn_core::rnn::{init_params, sample_mask, Activation};
use common::{gradient_max_rel_error, gradient_sweep, random_sequence};

#[test]
fn small_fixed_case_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(2024);
    for act in Activation::ALL {
        let params = init_params(2, 3, act, 17).unwrap();
        let mask = sample_mask(2, 3, 0.2, &mut rng).unwrap();
        let seq = random_sequence(&mut rng, 3, 2);
        let err = gradient_max_rel_error(&params, &mask, &seq, 0.01);
        assert!(err < 1e-5, "{act:?}: {err:e}");
    }
}

#[test]
fn fifty_random_configurations_match_finite_differences() {
    let worst = gradient_sweep();
    assert!(worst < 1e-5, "{worst:e}");
}
