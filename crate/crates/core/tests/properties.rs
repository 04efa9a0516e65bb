use std::collections::BTreeMap;

use proptest::prelude::*;

use cgvae::autodiff::{grad_check, Graph, Tensor};
use cgvae::distributions::{coarse_grain, make_grid, sample_concrete, CategoricalPmf};
use cgvae::divergence::{check_information_monotonicity, kl_category_surrogate, z_histogram, Partition};
use cgvae::parallel::Exec;
use cgvae::sampling::Rng;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coarse_graining_never_increases_kl(
        (p, q, assign) in (2usize..40).prop_flat_map(|n| (weights(n), weights(n), prop::collection::vec(0usize..5, n)))
    ) {
        let p = CategoricalPmf::from_weights(&p).unwrap();
        let q = CategoricalPmf::from_weights(&q).unwrap();
        // relabel so coarse cells are 0..k without gaps
        let mut seen = Vec::new();
        let assign: Vec<usize> = assign
            .iter()
            .map(|a| match seen.iter().position(|s| s == a) {
                Some(i) => i,
                None => {
                    seen.push(*a);
                    seen.len() - 1
                }
            })
            .collect();
        let part = Partition::new(assign).unwrap();
        let (fine, coarse) = check_information_monotonicity(&p, &q, &part).unwrap();
        prop_assert!(coarse >= 0.0);
        prop_assert!(fine + 1e-12 >= coarse, "{fine} < {coarse}");
    }

    #[test]
    fn surrogate_is_nonnegative_and_shift_invariant(
        (beta, alpha, shift) in (1usize..4, 2usize..12).prop_flat_map(|(d, r)| (
            prop::collection::vec(-20.0f64..20.0, d * r).prop_map(move |v| (d, r, v)),
            prop::collection::vec(-20.0f64..20.0, d * r),
            prop::collection::vec(-50.0f64..50.0, d),
        ))
    ) {
        let (d, r, beta) = beta;
        let b = Tensor::matrix(d, r, beta.clone()).unwrap();
        let a = Tensor::matrix(d, r, alpha).unwrap();
        let kl = kl_category_surrogate(&b, &a).unwrap();
        prop_assert!(kl >= 0.0);
        let moved: Vec<f64> = beta.iter().enumerate().map(|(i, v)| v + shift[i / r]).collect();
        let same = kl_category_surrogate(&Tensor::matrix(d, r, moved).unwrap(), &b).unwrap();
        prop_assert!(same.abs() < 1e-12, "{same}");
    }

    #[test]
    fn concrete_rows_lie_in_the_simplex(
        logits in prop::collection::vec(-30.0f64..30.0, 7),
        temperature in 0.05f64..3.0,
        seed in any::<u64>(),
    ) {
        let grid = make_grid(7).unwrap();
        let mut rng = Rng::new(seed);
        let noise: Vec<f64> = (0..7).map(|_| rng.gumbel()).collect();
        let s = sample_concrete(
            &Tensor::matrix(1, 7, logits).unwrap(),
            temperature,
            &Tensor::matrix(1, 7, noise).unwrap(),
        )
        .unwrap();
        let total: f64 = s.y.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(s.y.data().iter().all(|&y| (0.0..=1.0).contains(&y)));
        let z = coarse_grain(&s, &grid).unwrap()[0];
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&z));
    }

    #[test]
    fn softmax_log_chain_has_correct_gradients(
        x in prop::collection::vec(-5.0f64..5.0, 12),
        w in prop::collection::vec(-2.0f64..2.0, 12),
        temperature in 0.3f64..2.0,
    ) {
        let mut g = Graph::new();
        let (xi, wi) = (g.input("x"), g.input("w"));
        let s = g.softmax_rows(xi, temperature);
        let lse = g.logsumexp_rows(xi);
        let sw = g.mul(s, wi);
        let a = g.sum(sw);
        let b = g.sum(lse);
        let sp = g.softplus(xi);
        let c = g.mean(sp);
        let ab = g.add(a, b);
        let out = g.add(ab, c);
        let mut inputs = BTreeMap::new();
        inputs.insert("x".to_string(), Tensor::matrix(3, 4, x).unwrap());
        inputs.insert("w".to_string(), Tensor::matrix(3, 4, w).unwrap());
        for wrt in ["x", "w"] {
            let err = grad_check(&mut g, out, &inputs, wrt, 1e-6).unwrap();
            prop_assert!(err < 1e-5, "{wrt}: {err}");
        }
    }

    #[test]
    fn histograms_do_not_depend_on_the_thread_count(seed in any::<u64>(), n in 1usize..30_000) {
        let grid = make_grid(9).unwrap();
        let logits: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let rng = Rng::new(seed);
        let one = z_histogram(&logits, &grid, 0.4, n, 10, &rng, &Exec::sequential()).unwrap();
        let many = z_histogram(&logits, &grid, 0.4, n, 10, &rng, &Exec::with_threads(3)).unwrap();
        prop_assert_eq!(one.iter().sum::<u64>(), n as u64);
        prop_assert_eq!(one, many);
    }
}
