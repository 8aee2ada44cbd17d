use hdpo_core::math::sigmoid;
use hdpo_core::{contaminate, generate_clean, ContaminationSpec, Error, GeneratorSpec};

#[test]
fn zero_reward_gives_fair_coin() {
    // 1667 prompts × 6 pairs = 10002 labels.
    let spec = GeneratorSpec {
        n_prompts: 1667,
        n_responses_per_prompt: 4,
        feature_dim: 2,
        true_theta: Some(vec![0.0, 0.0]),
        margin_floor: 0.0,
        seed: 5,
    };
    let data = generate_clean(&spec).unwrap();
    assert_eq!(data.len(), 10002);
    let first_wins = data.pairs().iter().filter(|p| p.win_id < p.lose_id).count();
    let rate = first_wins as f64 / data.len() as f64;
    assert!((rate - 0.5).abs() < 0.02, "{rate}");
}

#[test]
fn labels_follow_bradley_terry() {
    let data = generate_clean(&GeneratorSpec {
        n_prompts: 2000,
        n_responses_per_prompt: 3,
        feature_dim: 4,
        true_theta: Some(vec![0.3, -0.2, 0.1, 0.25]),
        margin_floor: 0.0,
        seed: 9,
    })
    .unwrap();
    let theta = data.meta.true_theta.clone().unwrap();
    let mut wins = 0.0;
    let mut expected = 0.0;
    let mut variance = 0.0;
    for p in data.pairs() {
        let (a, b) = (p.win_id.min(p.lose_id), p.win_id.max(p.lose_id));
        let prob = sigmoid(data.true_reward(&theta, p.prompt_id, a) - data.true_reward(&theta, p.prompt_id, b));
        expected += prob;
        variance += prob * (1.0 - prob);
        if p.win_id == a {
            wins += 1.0;
        }
    }
    assert!((wins - expected).abs() < 3.0 * variance.sqrt(), "{wins} vs {expected}");
}

#[test]
fn same_seed_same_dataset() {
    let spec = GeneratorSpec { seed: 77, ..GeneratorSpec::default() };
    assert_eq!(generate_clean(&spec).unwrap(), generate_clean(&spec).unwrap());
    let other = GeneratorSpec { seed: 78, ..spec.clone() };
    assert_ne!(generate_clean(&spec).unwrap(), generate_clean(&other).unwrap());
}

#[test]
fn margin_floor_filters_pairs() {
    let base = GeneratorSpec { seed: 3, ..GeneratorSpec::default() };
    let all = generate_clean(&base).unwrap();
    assert_eq!(all.len(), 200 * 6);
    let floored = generate_clean(&GeneratorSpec { margin_floor: 2.0, ..base.clone() }).unwrap();
    let theta = floored.meta.true_theta.clone().unwrap();
    assert!(floored.len() < all.len());
    for p in floored.pairs() {
        let gap = floored.true_reward(&theta, p.prompt_id, p.win_id) - floored.true_reward(&theta, p.prompt_id, p.lose_id);
        assert!(gap.abs() >= 2.0);
    }
    // Dropping pairs never changes the labels of the ones kept.
    for p in floored.pairs() {
        assert!(all.pairs().contains(p));
    }
    assert!(matches!(
        generate_clean(&GeneratorSpec { margin_floor: f64::INFINITY, ..base }),
        Err(Error::NoPairsRetained { .. })
    ));
}

#[test]
fn zero_contamination_is_identity() {
    let data = generate_clean(&GeneratorSpec { seed: 4, ..GeneratorSpec::default() }).unwrap();
    assert_eq!(contaminate(&data, &ContaminationSpec::new(0.0, 1).unwrap()).unwrap(), data);
    assert!(ContaminationSpec::new(0.5, 1).is_err());
    assert!(ContaminationSpec::new(-0.1, 1).is_err());
}
