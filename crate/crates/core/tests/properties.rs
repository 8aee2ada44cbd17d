mod common;

use hdpo_core::data::contamination_indices;
use hdpo_core::math::{floor_count, sigmoid};
use hdpo_core::training::angular_error;
use hdpo_core::valuation::xi_hat_raw;
use hdpo_core::{
    contaminate, epsilon_hat, flip_pairs, generate_clean, likelihood, xi_hat, ContaminationSpec, GeneratorSpec,
    LinearRewardModel, PolicyModel, TabularPolicy, ValuationReport,
};
use proptest::prelude::*;

fn small_generator(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        n_prompts: 15,
        n_responses_per_prompt: 3,
        feature_dim: 3,
        true_theta: None,
        margin_floor: 0.0,
        seed,
    }
}

prop_compose! {
    fn seeded_instance()(seed in any::<u64>(), linear in any::<bool>()) -> (hdpo_core::PolicyModel, hdpo_core::PreferenceDataset) {
        let mut r = common::rng(seed);
        if linear { common::linear_instance(&mut r) } else { common::tabular_instance(&mut r) }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn margin_is_antisymmetric((model, data) in seeded_instance()) {
        for pair in data.pairs() {
            let g = model.margin(&data, pair).unwrap();
            prop_assert_eq!(model.margin(&data, &pair.swapped()).unwrap(), -g);
            let total = likelihood(&model, &data, pair).unwrap() + likelihood(&model, &data, &pair.swapped()).unwrap();
            prop_assert!((total - 1.0).abs() <= 2.0 * f64::EPSILON);
        }
    }

    #[test]
    fn tabular_margins_ignore_row_shifts(seed in any::<u64>(), shift in -5.0f64..5.0, ref_shift in -5.0f64..5.0) {
        let mut r = common::rng(seed);
        let (model, data) = common::tabular_instance(&mut r);
        let PolicyModel::Tabular(tab) = &model else { unreachable!() };
        let row = data.pairs()[0].prompt_id;
        let n = tab.n_responses();
        let mut theta = tab.theta().to_vec();
        let mut reference = tab.ref_logits().to_vec();
        for k in row * n..(row + 1) * n {
            theta[k] += shift;
            reference[k] += ref_shift;
        }
        let moved = PolicyModel::Tabular(TabularPolicy::new(tab.n_prompts(), n, theta, reference, tab.beta()).unwrap());
        for pair in data.pairs() {
            let a = model.margin(&data, pair).unwrap();
            let b = moved.margin(&data, pair).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn identical_policies_have_zero_reward(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let (model, data) = common::tabular_instance(&mut r);
        let PolicyModel::Tabular(tab) = &model else { unreachable!() };
        let same = PolicyModel::Tabular(
            TabularPolicy::new(tab.n_prompts(), tab.n_responses(), tab.ref_logits().to_vec(), tab.ref_logits().to_vec(), tab.beta()).unwrap(),
        );
        for p in 0..data.n_prompts() {
            for y in 0..data.n_responses() {
                prop_assert_eq!(same.implicit_reward(&data, p, y).unwrap(), 0.0);
            }
        }
        let zero = PolicyModel::Linear(LinearRewardModel::zeros(3, 0.1).unwrap());
        let lin = generate_clean(&small_generator(seed)).unwrap();
        prop_assert_eq!(zero.implicit_reward(&lin, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn xi_hat_in_unit_interval(l in prop::collection::vec(1e-12f64..0.999_999, 1..60), gamma in 0.1f64..5.0) {
        let xi = xi_hat(&l, gamma).unwrap();
        prop_assert!(xi > 0.0 && xi <= 1.0, "{}", xi);
        let eps = epsilon_hat(xi);
        prop_assert!((0.0..1.0).contains(&eps));
        prop_assert!(xi_hat_raw(&l, gamma).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn xi_hat_is_scale_invariant(l in prop::collection::vec(1e-6f64..0.5, 1..40), scale in 0.01f64..1.9, gamma in 0.5f64..4.0) {
        let scaled: Vec<f64> = l.iter().map(|s| s * scale).collect();
        let a = xi_hat(&l, gamma).unwrap();
        let b = xi_hat(&scaled, gamma).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn xi_hat_is_permutation_invariant(mut l in prop::collection::vec(1e-6f64..0.999, 2..40), gamma in 0.5f64..4.0) {
        let a = xi_hat(&l, gamma).unwrap();
        l.reverse();
        prop_assert!((a - xi_hat(&l, gamma).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn flagged_count_is_floor(l in prop::collection::vec(1e-9f64..0.999_999, 1..80), gamma in 0.5f64..4.0) {
        let report = ValuationReport::from_likelihoods(l.clone(), gamma).unwrap();
        prop_assert_eq!(report.flagged.len(), floor_count(l.len(), report.epsilon_hat));
        let cutoff = report.flagged.iter().map(|&i| l[i]).fold(f64::NEG_INFINITY, f64::max);
        let mask = report.is_flagged_mask();
        for (i, s) in l.iter().enumerate() {
            if !mask[i] {
                prop_assert!(*s >= cutoff);
            }
        }
    }

    #[test]
    fn flipping_twice_is_identity(seed in any::<u64>(), eps in 0.0f64..0.5) {
        let data = generate_clean(&small_generator(seed)).unwrap();
        let spec = ContaminationSpec::new(eps, seed ^ 0x5a5a).unwrap();
        let indices = contamination_indices(data.len(), &spec).unwrap();
        let once = flip_pairs(&data, &indices).unwrap();
        prop_assert_eq!(once.n_flipped(), indices.len());
        prop_assert_eq!(flip_pairs(&once, &indices).unwrap(), data);
    }

    #[test]
    fn contamination_count_is_exact(seed in any::<u64>(), eps in 0.0f64..0.5) {
        let data = generate_clean(&small_generator(seed)).unwrap();
        let dirty = contaminate(&data, &ContaminationSpec::new(eps, seed).unwrap()).unwrap();
        prop_assert_eq!(dirty.n_flipped(), floor_count(data.len(), eps));
        prop_assert_eq!(dirty.len(), data.len());
        for (a, b) in data.pairs().iter().zip(dirty.pairs()) {
            if b.truth_flipped {
                prop_assert_eq!(*b, a.swapped());
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn angular_error_scale_free(v in prop::collection::vec(-3.0f64..3.0, 1..8), a in 0.01f64..100.0, b in 0.01f64..100.0) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let u: Vec<f64> = v.iter().map(|x| x * a).collect();
        let w: Vec<f64> = v.iter().map(|x| x * b).collect();
        prop_assert!(angular_error(&u, &w).unwrap().abs() < 1e-12);
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        prop_assert!((angular_error(&u, &neg).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_complements(g in -700.0f64..700.0) {
        prop_assert!((sigmoid(g) + sigmoid(-g) - 1.0).abs() <= 1e-15);
    }
}

#[test]
fn floor_count_examples() {
    assert_eq!(floor_count(10, 0.25), 2);
    assert_eq!(floor_count(100, 0.29), 29);
    assert_eq!(floor_count(10, 0.0), 0);
}
