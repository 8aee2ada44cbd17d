//! Preference pairs, synthetic Bradley-Terry generation and label-flip
//! contamination.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, floor_count, sigmoid};
use crate::rng::{stream, Purpose};

/// One comparison `winner ≻ loser` for a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: usize,
    pub win_id: usize,
    pub lose_id: usize,
    /// Ground truth for synthetic data: the stored label is the reverse of
    /// the clean one. Never consulted by training or valuation.
    #[serde(default)]
    pub truth_flipped: bool,
}

impl PreferencePair {
    pub fn new(prompt_id: usize, win_id: usize, lose_id: usize) -> Self {
        Self {
            prompt_id,
            win_id,
            lose_id,
            truth_flipped: false,
        }
    }

    /// Winner and loser exchanged, flip flag toggled.
    pub fn swapped(self) -> Self {
        Self {
            prompt_id: self.prompt_id,
            win_id: self.lose_id,
            lose_id: self.win_id,
            truth_flipped: !self.truth_flipped,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub true_theta: Option<Vec<f64>>,
    /// Whether `truth_flipped` is meaningful for every pair.
    pub has_ground_truth: bool,
}

/// A preference dataset over a rectangular prompt × response table.
///
/// Response features are stored row-major as
/// `features[(prompt * n_responses + response) * feature_dim + k]`.
/// Index-only datasets use `feature_dim = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    n_prompts: usize,
    n_responses: usize,
    feature_dim: usize,
    features: Vec<f64>,
    pairs: Vec<PreferencePair>,
    pub meta: DatasetMeta,
}

impl PreferenceDataset {
    pub fn new(
        n_prompts: usize,
        n_responses: usize,
        feature_dim: usize,
        features: Vec<f64>,
        pairs: Vec<PreferencePair>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if n_prompts == 0 || n_responses < 2 {
            return Err(Error::InvalidConfig(format!(
                "dataset needs at least one prompt and two responses (got {n_prompts} x {n_responses})"
            )));
        }
        if features.len() != n_prompts * n_responses * feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "feature table has {} entries, expected {}",
                features.len(),
                n_prompts * n_responses * feature_dim
            )));
        }
        if let Some(theta) = &meta.true_theta {
            if theta.len() != feature_dim {
                return Err(Error::ShapeMismatch(format!(
                    "true_theta has length {}, feature_dim is {feature_dim}",
                    theta.len()
                )));
            }
        }
        let data = Self {
            n_prompts,
            n_responses,
            feature_dim,
            features,
            pairs,
            meta,
        };
        for pair in &data.pairs {
            data.check_pair(pair)?;
        }
        if data.pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(data)
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// φ(x, y) for one response.
    pub fn feature(&self, prompt: usize, response: usize) -> &[f64] {
        let start = (prompt * self.n_responses + response) * self.feature_dim;
        &self.features[start..start + self.feature_dim]
    }

    pub fn check_pair(&self, pair: &PreferencePair) -> Result<()> {
        if pair.prompt_id >= self.n_prompts {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: pair.prompt_id,
                len: self.n_prompts,
            });
        }
        for id in [pair.win_id, pair.lose_id] {
            if id >= self.n_responses {
                return Err(Error::IndexOutOfRange {
                    what: "response",
                    index: id,
                    len: self.n_responses,
                });
            }
        }
        if pair.win_id == pair.lose_id {
            return Err(Error::InvalidConfig(format!(
                "pair on prompt {} compares response {} with itself",
                pair.prompt_id, pair.win_id
            )));
        }
        Ok(())
    }

    /// Same tables, different pair list.
    pub fn with_pairs(&self, pairs: Vec<PreferencePair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for pair in &pairs {
            self.check_pair(pair)?;
        }
        Ok(Self {
            pairs,
            ..self.clone()
        })
    }

    /// r*(x, y) = θ*ᵀφ(x, y).
    pub fn true_reward(&self, theta: &[f64], prompt: usize, response: usize) -> f64 {
        math::dot(theta, self.feature(prompt, response))
    }

    pub fn n_flipped(&self) -> usize {
        self.pairs.iter().filter(|p| p.truth_flipped).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_prompts: usize,
    pub n_responses_per_prompt: usize,
    pub feature_dim: usize,
    /// Sampled from a standard normal when absent.
    pub true_theta: Option<Vec<f64>>,
    /// Candidate pairs with |r*(a) − r*(b)| below this are discarded.
    pub margin_floor: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_prompts: 200,
            n_responses_per_prompt: 4,
            feature_dim: 8,
            true_theta: None,
            margin_floor: 0.0,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_prompts == 0 {
            return Err(Error::InvalidConfig("n_prompts must be positive".into()));
        }
        if self.n_responses_per_prompt < 2 {
            return Err(Error::InvalidConfig(
                "n_responses_per_prompt must be at least 2".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.margin_floor.is_nan() || self.margin_floor < 0.0 {
            return Err(Error::InvalidConfig("margin_floor must be non-negative".into()));
        }
        if let Some(theta) = &self.true_theta {
            if theta.len() != self.feature_dim {
                return Err(Error::InvalidConfig(format!(
                    "true_theta has length {}, feature_dim is {}",
                    theta.len(),
                    self.feature_dim
                )));
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::InvalidConfig("true_theta must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Draws features and a true reward vector, then labels every unordered
/// response pair of every prompt by a Bradley-Terry coin with
/// `P(a ≻ b) = σ(r*(a) − r*(b))`.
///
/// Candidate pairs are visited in lexicographic order `(a, b)` with `a < b`;
/// pairs whose true reward gap is below `margin_floor` are dropped.
pub fn generate_clean(spec: &GeneratorSpec) -> Result<PreferenceDataset> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let n_resp = spec.n_responses_per_prompt;

    let theta = match &spec.true_theta {
        Some(t) => t.clone(),
        None => {
            let mut rng = stream(spec.seed, Purpose::TrueTheta, 0);
            (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        }
    };

    let mut features = Vec::with_capacity(spec.n_prompts * n_resp * dim);
    for prompt in 0..spec.n_prompts {
        let mut rng = stream(spec.seed, Purpose::Features, prompt as u64);
        for _ in 0..n_resp * dim {
            features.push(rng.sample::<f64, _>(StandardNormal));
        }
    }

    let mut pairs = Vec::new();
    for prompt in 0..spec.n_prompts {
        let mut rng = stream(spec.seed, Purpose::Preference, prompt as u64);
        let reward = |r: usize| {
            let start = (prompt * n_resp + r) * dim;
            math::dot(&theta, &features[start..start + dim])
        };
        for a in 0..n_resp {
            for b in (a + 1)..n_resp {
                let gap = reward(a) - reward(b);
                let u: f64 = rng.random();
                if gap.abs() < spec.margin_floor {
                    continue;
                }
                let pair = if u < sigmoid(gap) {
                    PreferencePair::new(prompt, a, b)
                } else {
                    PreferencePair::new(prompt, b, a)
                };
                pairs.push(pair);
            }
        }
    }

    if pairs.is_empty() {
        return Err(Error::NoPairsRetained {
            margin_floor: spec.margin_floor,
        });
    }
    PreferenceDataset::new(
        spec.n_prompts,
        n_resp,
        dim,
        features,
        pairs,
        DatasetMeta {
            seed: Some(spec.seed),
            true_theta: Some(theta),
            has_ground_truth: true,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub seed: u64,
}

impl ContaminationSpec {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        let spec = Self { epsilon, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "contamination ratio must lie in [0, 0.5), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Indices of the `⌊N·ε⌋` pairs `contaminate` flips, in ascending order.
pub fn contamination_indices(n: usize, spec: &ContaminationSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let k = floor_count(n, spec.epsilon);
    let mut rng = stream(spec.seed, Purpose::Contamination, 0);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Swaps winner and loser of the listed pairs and toggles their flip flag.
pub fn flip_pairs(data: &PreferenceDataset, indices: &[usize]) -> Result<PreferenceDataset> {
    let mut pairs = data.pairs.clone();
    for &i in indices {
        let len = pairs.len();
        let pair = pairs.get_mut(i).ok_or(Error::IndexOutOfRange {
            what: "pair",
            index: i,
            len,
        })?;
        *pair = pair.swapped();
    }
    Ok(PreferenceDataset {
        pairs,
        ..data.clone()
    })
}

/// Flips exactly `⌊N·ε⌋` labels chosen uniformly without replacement.
pub fn contaminate(data: &PreferenceDataset, spec: &ContaminationSpec) -> Result<PreferenceDataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let indices = contamination_indices(data.len(), spec)?;
    flip_pairs(data, &indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small_spec(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n_prompts: 20,
            n_responses_per_prompt: 4,
            feature_dim: 3,
            true_theta: None,
            margin_floor: 0.0,
            seed,
        }
    }

    #[test]
    fn infinite_floor_is_an_error() {
        let spec = GeneratorSpec {
            margin_floor: f64::INFINITY,
            ..small_spec(1)
        };
        assert!(matches!(
            generate_clean(&spec),
            Err(Error::NoPairsRetained { margin_floor }) if margin_floor.is_infinite()
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_clean(&small_spec(5)), generate_clean(&small_spec(5)));
        assert_ne!(generate_clean(&small_spec(5)), generate_clean(&small_spec(6)));
    }

    #[test]
    fn zero_floor_keeps_every_candidate() {
        let data = generate_clean(&small_spec(2)).unwrap();
        assert_eq!(data.len(), 20 * 6);
        assert!(data.pairs().iter().all(|p| !p.truth_flipped));
        assert!(data.meta.has_ground_truth);
    }

    #[test]
    fn floor_filters_by_true_gap() {
        let spec = GeneratorSpec {
            margin_floor: 1.5,
            ..small_spec(3)
        };
        let data = generate_clean(&spec).unwrap();
        let theta = data.meta.true_theta.clone().unwrap();
        assert!(data.len() < 120);
        for p in data.pairs() {
            let gap = data.true_reward(&theta, p.prompt_id, p.win_id)
                - data.true_reward(&theta, p.prompt_id, p.lose_id);
            assert!(gap.abs() >= 1.5);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_clean(&GeneratorSpec { feature_dim: 0, ..small_spec(0) }).is_err());
        assert!(generate_clean(&GeneratorSpec { n_responses_per_prompt: 1, ..small_spec(0) }).is_err());
        assert!(generate_clean(&GeneratorSpec { margin_floor: -1.0, ..small_spec(0) }).is_err());
        assert!(generate_clean(&GeneratorSpec { true_theta: Some(vec![1.0]), ..small_spec(0) }).is_err());
        assert!(ContaminationSpec::new(0.5, 0).is_err());
        assert!(ContaminationSpec::new(-0.1, 0).is_err());
    }

    #[test]
    fn contamination_counts() {
        let data = generate_clean(&small_spec(4)).unwrap();
        let same = contaminate(&data, &ContaminationSpec::new(0.0, 9).unwrap()).unwrap();
        assert_eq!(same, data);

        let ten = data.with_pairs(data.pairs()[..10].to_vec()).unwrap();
        let dirty = contaminate(&ten, &ContaminationSpec::new(0.25, 9).unwrap()).unwrap();
        assert_eq!(dirty.n_flipped(), 2);
        for (a, b) in ten.pairs().iter().zip(dirty.pairs()) {
            assert_eq!(a.prompt_id, b.prompt_id);
            if b.truth_flipped {
                assert_eq!((a.win_id, a.lose_id), (b.lose_id, b.win_id));
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn flipping_twice_restores() {
        let data = generate_clean(&small_spec(8)).unwrap();
        let spec = ContaminationSpec::new(0.3, 1).unwrap();
        let idx = contamination_indices(data.len(), &spec).unwrap();
        let once = flip_pairs(&data, &idx).unwrap();
        assert_ne!(once, data);
        assert_eq!(flip_pairs(&once, &idx).unwrap(), data);
    }

    #[test]
    fn pair_validation() {
        let data = generate_clean(&small_spec(0)).unwrap();
        assert!(data.with_pairs(vec![PreferencePair::new(0, 1, 1)]).is_err());
        assert!(data.with_pairs(vec![PreferencePair::new(99, 0, 1)]).is_err());
        assert!(data.with_pairs(vec![PreferencePair::new(0, 0, 4)]).is_err());
        assert!(data.with_pairs(vec![]).is_err());
    }
}
