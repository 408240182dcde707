mod common;

use pivotal::sampler::{round_branches, step_branches, RandomSource};
use pivotal::verifier::{exact_distribution, total_variation};
use pivotal::{
    eta_exact, pivotal_step, scale_weights, subset_alpha, CaseTag, PairPolicy, Procedure, Sampler, ScaledState,
    SubsetSpec,
};
use proptest::prelude::*;

use common::{in_order_oracle, marginals, random_permutation, random_subset, random_weights, rng, tv_distance};

fn instance() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..=10).prop_flat_map(|(seed, n)| (Just(seed), Just(n), 1..n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_is_a_martingale(xi in 1e-9f64..1.0 - 1e-9, xj in 1e-9f64..1.0 - 1e-9) {
        let b = step_branches(xi, xj).unwrap();
        let p = b.first_prob;
        prop_assert!((0.0..=1.0).contains(&p));
        let mean_i = p * b.first.0 + (1.0 - p) * b.second.0;
        let mean_j = p * b.first.1 + (1.0 - p) * b.second.1;
        prop_assert!((mean_i - xi).abs() <= 1e-12);
        prop_assert!((mean_j - xj).abs() <= 1e-12);
    }

    #[test]
    fn step_conserves_and_decides_one(xi in 1e-9f64..1.0 - 1e-9, xj in 1e-9f64..1.0 - 1e-9, u in 0.0f64..1.0) {
        let out = pivotal_step(xi, xj, u).unwrap();
        prop_assert!((out.new_xi + out.new_xj - xi - xj).abs() <= 1e-12);
        for v in [out.new_xi, out.new_xj] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let decided = [out.new_xi, out.new_xj].iter().filter(|&&v| v == 0.0 || v == 1.0).count();
        prop_assert!(decided >= 1);
        let expected = if xi + xj < 1.0 { CaseTag::Transfer } else { CaseTag::Saturate };
        prop_assert_eq!(out.case, expected);
    }

    #[test]
    fn runs_conserve_mass_and_stay_in_range((seed, n, k) in instance(), stream in 0u64..4) {
        let wv = random_weights(&mut rng(seed), n, k);
        let x0 = scale_weights(&wv);
        let a = SubsetSpec::full(n);
        for sampler in [Sampler::x(PairPolicy::InOrder), Sampler::x(PairPolicy::RandomPair), Sampler::x_star(None)] {
            let run = sampler.run(&x0, &mut RandomSource::new(seed, stream), Some(&a)).unwrap();
            prop_assert_eq!(run.sample().len(), k);
            let trace = run.trace.unwrap();
            for step in &trace.steps {
                let before: f64 = step.before.0 + step.before.1;
                let after: f64 = step.after.0 + step.after.1;
                prop_assert!((before - after).abs() <= 1e-12);
                prop_assert!(step.after.0 >= 0.0 && step.after.0 <= 1.0);
                prop_assert!(step.after.1 >= 0.0 && step.after.1 <= 1.0);
            }
            if sampler.policy().is_deterministic() {
                for movement in trace.round_movements() {
                    prop_assert!(movement <= 1.0 + 1e-12);
                }
            }
        }
        let run = Sampler::x_star_star(None).run(&x0, &mut RandomSource::new(seed, stream), None).unwrap();
        prop_assert_eq!(run.sample().len(), k);
        prop_assert_eq!(run.rounds, x0.expected_rounds());
    }

    #[test]
    fn scaling_round_trips((seed, n, k) in instance()) {
        let wv = random_weights(&mut rng(seed), n, k);
        let x0 = scale_weights(&wv);
        for (x, w) in x0.x().iter().zip(wv.weights()) {
            prop_assert!((x / k as f64 - w).abs() <= 1e-12);
        }
        prop_assert!((x0.sum() - k as f64).abs() <= 1e-9);
    }

    #[test]
    fn eta_has_two_equivalent_forms((seed, n, k) in instance()) {
        let mut r = rng(seed);
        let wv = random_weights(&mut r, n, k);
        let a = SubsetSpec::new(random_subset(&mut r, n), n).unwrap();
        let x = scale_weights(&wv);
        let alpha = subset_alpha(&wv, &a).unwrap();
        let direct: f64 = a.members().iter().map(|&i| x.x()[i] * (1.0 - x.x()[i])).sum();
        let eta = eta_exact(&wv, &a).unwrap();
        prop_assert!((k as f64 * eta - direct).abs() <= 1e-12);
        let sq: f64 = a.members().iter().map(|&i| wv.weights()[i].powi(2)).sum();
        prop_assert!((eta - (alpha - k as f64 * sq).max(0.0)).abs() <= 1e-12);
    }

    #[test]
    fn exact_inclusion_matches_weights((seed, n, k) in instance()) {
        let mut r = rng(seed);
        let wv = random_weights(&mut r, n, k);
        let x0 = scale_weights(&wv);
        let order = random_permutation(&mut r, n);
        let a = SubsetSpec::empty();
        for sampler in [
            Sampler::x(PairPolicy::InOrder),
            Sampler::x(PairPolicy::CustomOrder(order.clone())),
            Sampler::x_star(Some(order.clone())),
            Sampler::x_star_star(Some(order.clone())),
        ] {
            let d = exact_distribution(&x0, &sampler, &a).unwrap();
            prop_assert!((d.total_mass() - 1.0).abs() <= 1e-10);
            prop_assert!(d.max_inclusion_error(&x0) <= 1e-10, "{:?}", sampler.procedure());
        }
    }

    #[test]
    fn library_enumeration_matches_independent_oracle((seed, n, k) in instance()) {
        let mut r = rng(seed);
        let wv = random_weights(&mut r, n, k);
        let x0 = scale_weights(&wv);
        let order = random_permutation(&mut r, n);
        let oracle = in_order_oracle(x0.x(), &order);
        let oracle_marginals = marginals(&oracle, n);
        for (p, x) in oracle_marginals.iter().zip(x0.x()) {
            prop_assert!((p - x).abs() <= 1e-10);
        }
        let a = SubsetSpec::empty();
        for sampler in [Sampler::x_star(Some(order.clone())), Sampler::x_star_star(Some(order.clone()))] {
            let d = exact_distribution(&x0, &sampler, &a).unwrap();
            prop_assert!(tv_distance(&d.sample_pmf, &oracle) <= 1e-10);
        }
    }

    #[test]
    fn star_star_has_the_law_of_star((seed, n, k) in instance()) {
        let mut r = rng(seed);
        let wv = random_weights(&mut r, n, k);
        let x0 = scale_weights(&wv);
        let order = random_permutation(&mut r, n);
        let a = SubsetSpec::empty();
        let star = exact_distribution(&x0, &Sampler::x_star(Some(order.clone())), &a).unwrap();
        let star_star = exact_distribution(&x0, &Sampler::x_star_star(Some(order)), &a).unwrap();
        prop_assert!(total_variation(&star, &star_star) <= 1e-10);
        let expected = x0.expected_rounds();
        prop_assert_eq!((star.min_rounds, star.max_rounds), (expected, expected));
        prop_assert_eq!((star_star.min_rounds, star_star.max_rounds), (expected, expected));
    }

    #[test]
    fn round_law_equals_composed_steps(
        prefix in prop::collection::vec(0.01f64..0.3, 1..6),
        extra in 0.0f64..1.0,
    ) {
        let xi: f64 = prefix.iter().sum();
        prop_assume!(xi < 1.0 - 1e-6);
        // next coordinate chosen so the round closes: xi + next >= 1
        let next = (1.0 - xi) + extra * xi;
        prop_assume!(next < 1.0 - 1e-6);

        // Compose transfer steps over the prefix: the surviving holder is r
        // with probability x_r / xi, holding xi.
        let holders: Vec<f64> = prefix.iter().map(|x| x / xi).collect();
        let s = xi + next;
        let winner_saturates = (1.0 - next) / (2.0 - s);

        let (probs, outcomes) = round_branches(&prefix, next).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let mut seen = vec![[0.0f64; 2]; prefix.len()];
        for (p, o) in probs.iter().zip(&outcomes) {
            seen[o.winner][usize::from(!o.winner_saturates)] += p;
            prop_assert!((o.residual - (s - 1.0)).abs() <= 1e-12);
        }
        for (r, h) in holders.iter().enumerate() {
            prop_assert!((seen[r][0] - h * winner_saturates).abs() <= 1e-12);
            prop_assert!((seen[r][1] - h * (1.0 - winner_saturates)).abs() <= 1e-12);
        }
    }
}

#[test]
fn random_pair_is_unbiased_by_monte_carlo() {
    let x0 = ScaledState::new(vec![0.3, 0.6, 0.5, 0.9, 0.7]).unwrap();
    let sampler = Sampler::x(PairPolicy::RandomPair);
    let trials = 40_000u64;
    let mut counts = [0u64; 5];
    for t in 0..trials {
        let run = sampler.run(&x0, &mut RandomSource::new(7, t), None).unwrap();
        for i in run.sample() {
            counts[i] += 1;
        }
    }
    for (c, x) in counts.iter().zip(x0.x()) {
        let p = *c as f64 / trials as f64;
        let sigma = (x * (1.0 - x) / trials as f64).sqrt();
        assert!((p - x).abs() <= 4.0 * sigma, "p={p} x={x}");
    }
}

#[test]
fn zero_and_one_weights_are_fixed() {
    let x0 = ScaledState::new(vec![0.0, 1.0, 0.5, 0.5, 1.0]).unwrap();
    for procedure in [Procedure::X, Procedure::XStar, Procedure::XStarStar] {
        let sampler = Sampler::new(procedure, PairPolicy::InOrder).unwrap();
        let d = exact_distribution(&x0, &sampler, &SubsetSpec::empty()).unwrap();
        assert_eq!(d.inclusion_probs[0], 0.0);
        assert_eq!(d.inclusion_probs[1], 1.0);
        assert_eq!(d.inclusion_probs[4], 1.0);
    }
}

#[test]
fn random_policy_is_rejected_for_ordered_procedures() {
    assert!(Sampler::new(Procedure::XStar, PairPolicy::RandomPair).is_err());
    assert!(Sampler::new(Procedure::XStarStar, PairPolicy::RandomPair).is_err());
}

#[test]
fn bad_permutation_is_rejected() {
    let x0 = ScaledState::new(vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    let sampler = Sampler::x_star(Some(vec![0, 1, 1, 3]));
    assert!(sampler.run(&x0, &mut RandomSource::new(1, 0), None).is_err());
}
