#![allow(dead_code)]

use hdpo_core::{DatasetMeta, LinearRewardModel, PolicyModel, PreferenceDataset, PreferencePair, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_pairs(rng: &mut ChaCha8Rng, n_prompts: usize, n_responses: usize, n_pairs: usize) -> Vec<PreferencePair> {
    (0..n_pairs)
        .map(|_| {
            let prompt = rng.random_range(0..n_prompts);
            let win = rng.random_range(0..n_responses);
            let lose = (win + rng.random_range(1..n_responses)) % n_responses;
            PreferencePair::new(prompt, win, lose)
        })
        .collect()
}

/// Small tabular instance with random logits and reference.
pub fn tabular_instance(rng: &mut ChaCha8Rng) -> (PolicyModel, PreferenceDataset) {
    let n_prompts = rng.random_range(1..4);
    let n_responses = rng.random_range(2..5);
    let n_pairs = rng.random_range(1..9);
    let pairs = random_pairs(rng, n_prompts, n_responses, n_pairs);
    let data = PreferenceDataset::new(n_prompts, n_responses, 0, vec![], pairs, DatasetMeta::default()).unwrap();
    let size = n_prompts * n_responses;
    let theta = (0..size).map(|_| rng.random_range(-2.0..2.0)).collect();
    let reference = (0..size).map(|_| rng.random_range(-2.0..2.0)).collect();
    let beta = rng.random_range(0.1..2.0);
    let model = TabularPolicy::new(n_prompts, n_responses, theta, reference, beta).unwrap();
    (PolicyModel::Tabular(model), data)
}

/// Small linear instance with random features and weights.
pub fn linear_instance(rng: &mut ChaCha8Rng) -> (PolicyModel, PreferenceDataset) {
    let n_prompts = rng.random_range(1..4);
    let n_responses = rng.random_range(2..5);
    let dim = rng.random_range(1..5);
    let n_pairs = rng.random_range(1..9);
    let pairs = random_pairs(rng, n_prompts, n_responses, n_pairs);
    let features = (0..n_prompts * n_responses * dim)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let data = PreferenceDataset::new(n_prompts, n_responses, dim, features, pairs, DatasetMeta::default()).unwrap();
    let weights = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let beta = rng.random_range(0.1..2.0);
    (PolicyModel::Linear(LinearRewardModel::new(weights, beta).unwrap()), data)
}

pub fn instance(rng: &mut ChaCha8Rng, i: usize) -> (PolicyModel, PreferenceDataset) {
    if i.is_multiple_of(2) {
        tabular_instance(rng)
    } else {
        linear_instance(rng)
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
