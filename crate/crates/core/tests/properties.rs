//! Property-based invariants over randomized inputs.

use nimgp::kernel::{kernel_eval, kernel_matrix, KernelParams};
use nimgp::likelihood::{class_probabilities, gauss_hermite_rule, LikelihoodConfig};
use nimgp::linalg::{cholesky, Mat};
use nimgp::noise::{kl_x, PriorConfig};
use proptest::prelude::*;

fn se_params(d: usize) -> impl Strategy<Value = KernelParams> {
    (
        0.05f64..4.0,
        proptest::collection::vec(0.1f64..4.0, d..=d),
        0.0f64..0.5,
    )
        .prop_map(|(amp, ls, jit)| KernelParams::se_ard(amp, ls, jit).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric(
        p in se_params(3),
        x in proptest::collection::vec(-5.0f64..5.0, 3),
        x2 in proptest::collection::vec(-5.0f64..5.0, 3),
    ) {
        let a = kernel_eval(&p, &x, &x2, false).unwrap();
        let b = kernel_eval(&p, &x2, &x, false).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn se_kernel_decays_in_each_coordinate(
        p in se_params(2),
        x in proptest::collection::vec(-2.0f64..2.0, 2),
        gap in 0.1f64..2.0,
        dim in 0usize..2,
    ) {
        let mut near = x.clone();
        near[dim] += gap;
        let mut far = x.clone();
        far[dim] += gap * 1.5;
        let kn = kernel_eval(&p, &x, &near, false).unwrap();
        let kf = kernel_eval(&p, &x, &far, false).unwrap();
        prop_assert!(kf < kn);
    }

    #[test]
    fn square_kernel_matrices_factorize(
        p in se_params(2),
        rows in proptest::collection::vec(
            proptest::collection::vec(-3.0f64..3.0, 2), 1..40),
    ) {
        let a = Mat::from_rows(rows);
        let k = kernel_matrix(&p, &a, &a, true).unwrap();
        prop_assert!(cholesky(&k).is_ok());
    }

    #[test]
    fn class_probabilities_live_on_the_simplex(
        means in proptest::collection::vec(-3.0f64..3.0, 3),
        vars in proptest::collection::vec(0.05f64..4.0, 3),
        eps in 0.0f64..0.01,
    ) {
        let cfg = LikelihoodConfig { num_classes: 3, label_noise: eps, quad_points: 16 };
        let quad = gauss_hermite_rule(16).unwrap();
        let p = class_probabilities(&means, &vars, &cfg, &quad).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for v in &p {
            prop_assert!(*v >= 0.0 && *v <= 1.0);
        }
    }

    #[test]
    fn latent_input_kl_nonnegative(
        mu in proptest::collection::vec(-10.0f64..10.0, 4),
        var in proptest::collection::vec(1e-4f64..100.0, 4),
        s in 1.0f64..10000.0,
    ) {
        let prior = PriorConfig { s };
        prop_assert!(kl_x(&mu, &var, &prior) >= -1e-10);
    }
}
