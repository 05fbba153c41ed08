mod common;

use ndarray::Array2;
use proptest::prelude::*;
use solarbatt::neural::{init_mlp, soft_update, Activation};

use common::{composed_objective_error, random_net, single_net_error, spearman};

#[test]
fn backward_matches_finite_differences() {
    for case in 0..20 {
        let err = single_net_error(case);
        assert!(err < 1e-5, "net {case}: relative error {err:e}");
    }
}

#[test]
fn policy_gradient_matches_finite_differences() {
    for case in 0..4 {
        let err = composed_objective_error(case);
        assert!(err < 1e-5, "case {case}: relative error {err:e}");
    }
}

#[test]
fn spearman_helper() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn forward_is_pure(seed in any::<u64>(), xs in proptest::collection::vec(-5.0..5.0f64, 7)) {
        let net = random_net(&[7, 9, 3], Activation::Sigmoid, seed);
        let (a, _) = net.forward(&xs).unwrap();
        let (b, _) = net.forward(&xs).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(net.clone().forward(&xs).unwrap().0, a);
    }

    #[test]
    fn squashed_outputs_are_in_unit_interval(
        seed in any::<u64>(),
        scale in 0.0..1e3f64,
        rows in 1usize..5,
    ) {
        let net = init_mlp(&[7, 12, 12, 3], Activation::Sigmoid, seed).unwrap();
        let x = Array2::from_shape_fn((rows, 7), |(i, j)| scale * ((i * 7 + j) as f64).sin());
        let y = net.predict(x.view()).unwrap();
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn soft_update_tracks_geometrically(tau in 0.0..=1.0f64, k in 1usize..60, seed in any::<u64>()) {
        let online = random_net(&[4, 6, 2], Activation::Identity, seed);
        let start = random_net(&[4, 6, 2], Activation::Identity, seed.wrapping_add(1));
        let mut target = start.clone();
        for _ in 0..k {
            soft_update(&mut target, &online, tau).unwrap();
        }
        let decay = (1.0 - tau).powi(k as i32);
        for ((t, p), q) in target.params().zip(online.params()).zip(start.params()) {
            prop_assert!((t - (p + decay * (q - p))).abs() <= 1e-12);
        }
    }
}
