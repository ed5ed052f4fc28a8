mod common;

use common::*;
use fedsysid::clustering::{aggregate, clustercraft_step, ecc_step, glorot_scaled_init, CcThresholds, ClusterRegistry};
use fedsysid::datagen::{make_minibatches, make_regression_view, split_worker_data};
use fedsysid::linalg::Norm2;
use fedsysid::lti::{generate_rollout, predict_rollout, simulate_rollout, stability_report, NoiseLevels};
use fedsysid::metrics::{best_match_error, delta_min, fit_per_state, misclassified_pct, param_error};
use fedsysid::rng::{substream, Domain};
use fedsysid::training::{least_squares_update, loss_gradient, loss_mse, loss_regularized};
use fedsysid::LtiParams;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), mu in 0.0f64..0.1) {
        let mut r = rng(seed);
        let params = random_params(&mut r, 3, 2, 1.0);
        let view = random_view(&mut r, 3, 2, 20);
        prop_assert!(gradient_gap(&params, &view, mu) < 1e-5);
    }

    #[test]
    fn aggregate_matches_membership_weighted_mean(seed in any::<u64>(), workers in 1usize..12, k in 1usize..5) {
        let mut r = rng(seed);
        let params: Vec<_> = (0..workers).map(|_| random_params(&mut r, 3, 2, 1.0)).collect();
        let previous: Vec<_> = (0..k).map(|_| random_params(&mut r, 3, 2, 1.0)).collect();
        let flags: Vec<usize> = (0..workers).map(|_| rand::Rng::random_range(&mut r, 0..k)).collect();
        prop_assert!(aggregate_matches_brute_force(&params, &flags, &previous));
    }

    #[test]
    fn aggregate_never_exceeds_member_norm(seed in any::<u64>(), workers in 1usize..10) {
        let mut r = rng(seed);
        let params: Vec<_> = (0..workers).map(|_| random_params(&mut r, 3, 2, 1.0)).collect();
        let out = aggregate(&params, &vec![0; workers], &[LtiParams::zeros(3, 2)]).unwrap();
        let max = params.iter().map(|p| p.theta().norm()).fold(0.0, f64::max);
        prop_assert!(out[0].theta().norm() <= max + 1e-12);
    }

    #[test]
    fn merge_is_idempotent_and_never_grows(seed in any::<u64>(), n in 1usize..15, threshold in 0.01f64..2.0) {
        let mut r = rng(seed);
        let params: Vec<_> = (0..n).map(|_| random_params(&mut r, 3, 2, 0.5)).collect();
        prop_assert!(merge_properties_hold(&params, threshold));
    }

    #[test]
    fn misclassification_matches_pairwise_enumeration(flags in prop::collection::vec(0usize..6, 1..40), seed in any::<u64>()) {
        let mut r = rng(seed);
        let labels: Vec<usize> = flags.iter().map(|_| rand::Rng::random_range(&mut r, 0..4)).collect();
        prop_assert!(mw_matches_pairwise(&flags, &labels));
        let pct = misclassified_pct(&flags, &labels).unwrap();
        prop_assert!((0.0..=100.0).contains(&pct));
    }

    #[test]
    fn misclassification_ignores_cluster_relabelling(flags in prop::collection::vec(0usize..5, 1..30), shift in 1usize..5) {
        let labels: Vec<usize> = (0..flags.len()).map(|i| i % 3).collect();
        let relabelled: Vec<usize> = flags.iter().map(|f| (f + shift) % 5).collect();
        prop_assert_eq!(misclassified_pct(&flags, &labels).unwrap(), misclassified_pct(&relabelled, &labels).unwrap());
    }

    #[test]
    fn fit_is_shift_and_scale_invariant(seed in any::<u64>(), c in -10.0f64..10.0, s in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, 3, 30, 1.0);
        let est = &x + random_matrix(&mut r, 3, 30, 0.2);
        let base = fit_per_state(&x, &est).unwrap();
        let shifted = fit_per_state(&x.add_scalar(c), &est.add_scalar(c)).unwrap();
        let scaled = fit_per_state(&(&x * s), &(&est * s)).unwrap();
        for n in 0..3 {
            prop_assert!((base[n] - shifted[n]).abs() < 1e-9);
            prop_assert!((base[n] - scaled[n]).abs() < 1e-9);
            prop_assert!(base[n] <= 1.0);
        }
    }

    #[test]
    fn spectral_radius_is_similarity_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, 3, 3, 1.0);
        let p = DMatrix::<f64>::identity(3, 3) + random_matrix(&mut r, 3, 3, 0.3);
        let p_inv = p.clone().try_inverse().unwrap();
        let rho = stability_report(&a).unwrap().spectral_radius;
        let rho_sim = stability_report(&(&p * &a * p_inv)).unwrap().spectral_radius;
        prop_assert!((rho - rho_sim).abs() < 1e-8);
    }

    #[test]
    fn regularized_loss_dominates_mse(seed in any::<u64>(), mu in 0.0f64..1.0) {
        let mut r = rng(seed);
        let params = random_params(&mut r, 3, 2, 1.0);
        let view = random_view(&mut r, 3, 2, 10);
        let reg = loss_regularized(&params, &view, mu).unwrap();
        let mse = loss_mse(&params, &view).unwrap();
        prop_assert!(reg >= mse);
        prop_assert_eq!(reg == mse, mu * params.a().norm() == 0.0);
    }

    #[test]
    fn least_squares_step_is_scaled_negative_gradient(seed in any::<u64>(), alpha in 1e-4f64..0.1) {
        let mut r = rng(seed);
        let params = random_params(&mut r, 3, 2, 1.0);
        let view = random_view(&mut r, 3, 2, 16);
        let next = least_squares_update(&params, &view, alpha).unwrap();
        let grad = loss_gradient(&params, &view, 0.0).unwrap();
        let expected = params.theta() - grad * (alpha * view.samples() as f64 / 2.0);
        prop_assert!((next.theta() - expected).amax() < 1e-10);
    }

    #[test]
    fn minibatches_partition_the_samples(samples in 1usize..600, batch in 1usize..200, seed in any::<u64>()) {
        let mut r = rng(seed);
        let view = random_view(&mut r, 2, 1, samples);
        let mut all: Vec<usize> = make_minibatches(&view, batch, &mut r).into_iter().flatten().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..samples).collect::<Vec<_>>());
    }

    #[test]
    fn split_keeps_every_rollout_once(n in 2usize..40, seed in any::<u64>()) {
        let mut r = rng(seed);
        let truth = random_params(&mut r, 2, 1, 0.3);
        let noise = NoiseLevels { sigma_x: 1.0, sigma_u: 1.0, sigma_w: 0.1 };
        let rollouts: Vec<_> = (0..n).map(|_| generate_rollout(&truth, 3, noise, &mut r).unwrap()).collect();
        let (train, cc) = split_worker_data(rollouts.clone(), 0.2, &mut r).unwrap();
        prop_assert!(!train.is_empty() && !cc.is_empty());
        prop_assert_eq!(train.len() + cc.len(), n);
        for original in &rollouts {
            let hits = train.iter().chain(&cc).filter(|x| *x == original).count();
            prop_assert_eq!(hits, 1);
        }
    }

    #[test]
    fn noiseless_prediction_equals_simulation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let truth = random_params(&mut r, 3, 2, 0.3);
        let noise = NoiseLevels { sigma_x: 1.0, sigma_u: 1.0, sigma_w: 0.0 };
        let rollout = generate_rollout(&truth, 25, noise, &mut r).unwrap();
        let pred = predict_rollout(&truth, &rollout).unwrap();
        let sim = simulate_rollout(&truth, &rollout.initial_state(), rollout.inputs()).unwrap();
        prop_assert!((&pred - sim.states.columns(1, 25)).amax() < 1e-10);
        prop_assert!((&pred - rollout.successors()).amax() < 1e-12);
    }

    #[test]
    fn exact_noiseless_parameters_are_a_least_squares_fixed_point(seed in any::<u64>()) {
        let mut r = rng(seed);
        let truth = random_params(&mut r, 3, 2, 0.3);
        let noise = NoiseLevels { sigma_x: 1.0, sigma_u: 1.0, sigma_w: 0.0 };
        let rollouts: Vec<_> = (0..3).map(|_| generate_rollout(&truth, 20, noise, &mut r).unwrap()).collect();
        let view = make_regression_view(&rollouts).unwrap();
        let next = least_squares_update(&truth, &view, 0.01).unwrap();
        prop_assert!((next.theta() - truth.theta()).amax() < 1e-12);
    }

    #[test]
    fn same_seed_gives_identical_rollouts(seed in any::<u64>(), worker in 0u64..100, k in 0u64..100) {
        let truth = LtiParams::from_rows(&[&[0.5, 0.1], &[0.0, 0.3]], &[&[1.0], &[0.5]]).unwrap();
        let noise = NoiseLevels { sigma_x: 0.05, sigma_u: 0.05, sigma_w: 0.02 };
        let a = generate_rollout(&truth, 10, noise, &mut substream(seed, Domain::Rollout, worker, k)).unwrap();
        let b = generate_rollout(&truth, 10, noise, &mut substream(seed, Domain::Rollout, worker, k)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn separation_is_the_smallest_pairwise_distance(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let params: Vec<_> = (0..n).map(|_| random_params(&mut r, 3, 2, 1.0)).collect();
        let d = delta_min(&params, Norm2::Spectral).unwrap();
        let mut brute = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    brute = brute.min(Norm2::Spectral.apply(&(params[i].theta() - params[j].theta())));
                }
            }
        }
        prop_assert!((d - brute).abs() < 1e-12);
    }

    #[test]
    fn best_match_is_no_worse_than_any_candidate(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let candidates: Vec<_> = (0..n).map(|_| random_params(&mut r, 3, 2, 1.0)).collect();
        let truth = random_params(&mut r, 3, 2, 1.0);
        let best = best_match_error(&candidates, &truth).unwrap();
        for c in &candidates {
            prop_assert!(best <= param_error(c, &truth).unwrap());
        }
    }

    #[test]
    fn craft_steps_grow_k_by_at_most_one(seed in any::<u64>(), workers in 1usize..20, k in 1usize..4) {
        let mut r = rng(seed);
        let registry = ClusterRegistry::new(
            (0..k).map(|_| random_params(&mut r, 3, 2, 0.3)).collect(),
            (0..workers).map(|i| i % k).collect(),
        ).unwrap();
        let prev: Vec<f64> = (0..workers).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
        let curr: Vec<f64> = prev.iter().map(|p| if rand::Rng::random_bool(&mut r, 0.5) { *p } else { p + 0.1 }).collect();
        let worker_params: Vec<_> = (0..workers).map(|_| random_params(&mut r, 3, 2, 0.05)).collect();
        let th = CcThresholds::default();
        let cc = clustercraft_step(&prev, &curr, &registry, &th, &mut r).unwrap();
        let ecc = ecc_step(&prev, &curr, &registry, &worker_params, &th, &mut r).unwrap();
        for out in [cc, ecc] {
            prop_assert!(out.k == k || out.k == k + 1);
            prop_assert!(out.flags.iter().all(|&f| f < out.k));
            prop_assert_eq!(out.new_cluster.is_some(), out.k == k + 1);
        }
    }

    #[test]
    fn tiny_similarity_radius_moves_only_the_trigger(seed in any::<u64>(), workers in 2usize..15) {
        let mut r = rng(seed);
        let registry = ClusterRegistry::single(LtiParams::zeros(3, 2), workers);
        let prev = vec![0.1; workers];
        let curr = vec![0.1; workers];
        let worker_params: Vec<_> = (0..workers).map(|_| random_params(&mut r, 3, 2, 1.0)).collect();
        let th = CcThresholds { ecc_similarity: 1e-300, ..CcThresholds::default() };
        let out = ecc_step(&prev, &curr, &registry, &worker_params, &th, &mut r).unwrap();
        prop_assert_eq!(out.moved, vec![0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn stability_agrees_with_characteristic_polynomial(seed in any::<u64>(), scale in 0.1f64..1.2) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, 3, 3, scale);
        prop_assert_eq!(stability_report(&a).unwrap().is_stable, char_poly_stable(&a));
    }

    #[test]
    fn scaled_glorot_states_are_stable(seed in any::<u64>()) {
        let p = glorot_scaled_init(3, 2, &mut rng(seed));
        prop_assert!(p.stability().unwrap().is_stable);
    }
}
