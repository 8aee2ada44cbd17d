//! Desk-scale policy backends.
//!
//! Both backends expose their parameters as one flat vector so the optimizer
//! and the finite-difference checks do not care which one is in use.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{PreferenceDataset, PreferencePair};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream, Purpose};
use rand::Rng;

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Tabular,
    Linear,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Tabular => "tabular",
            Backend::Linear => "linear",
        }
    }
}

/// Softmax policy over a fixed response table, with a frozen reference.
///
/// Logits are row-major `[n_prompts × n_responses]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_prompts: usize,
    n_responses: usize,
    theta: Vec<f64>,
    ref_logits: Vec<f64>,
    beta: f64,
}

impl TabularPolicy {
    pub fn new(
        n_prompts: usize,
        n_responses: usize,
        theta: Vec<f64>,
        ref_logits: Vec<f64>,
        beta: f64,
    ) -> Result<Self> {
        let cells = n_prompts * n_responses;
        if theta.len() != cells || ref_logits.len() != cells {
            return Err(Error::ShapeMismatch(format!(
                "logit tables have {} and {} entries, expected {cells}",
                theta.len(),
                ref_logits.len()
            )));
        }
        check_beta(beta)?;
        Ok(Self {
            n_prompts,
            n_responses,
            theta,
            ref_logits,
            beta,
        })
    }

    /// A policy equal to a uniform reference.
    pub fn uniform(n_prompts: usize, n_responses: usize, beta: f64) -> Result<Self> {
        let cells = n_prompts * n_responses;
        Self::new(n_prompts, n_responses, vec![0.0; cells], vec![0.0; cells], beta)
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn ref_logits(&self) -> &[f64] {
        &self.ref_logits
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn row(&self, prompt: usize) -> core::ops::Range<usize> {
        prompt * self.n_responses..(prompt + 1) * self.n_responses
    }

    /// `log softmax(table)[prompt][response]`.
    pub fn log_prob(&self, table: &[f64], prompt: usize, response: usize) -> f64 {
        let row = &table[self.row(prompt)];
        row[response] - math::log_sum_exp(row)
    }

    /// Softmax of one row of the policy logits.
    pub fn policy_probs(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.theta[self.row(prompt)])
    }

    pub fn reference_probs(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.ref_logits[self.row(prompt)])
    }

    pub fn ref_logits_mut(&mut self) -> &mut [f64] {
        &mut self.ref_logits
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let lse = math::log_sum_exp(row);
    row.iter().map(|x| math::exp(x - lse)).collect()
}

/// Reward model `r̂(x, y) = β·wᵀφ(x, y)` over dataset features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRewardModel {
    weights: Vec<f64>,
    beta: f64,
}

impl LinearRewardModel {
    pub fn new(weights: Vec<f64>, beta: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfig("linear model needs at least one weight".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("linear weights must be finite".into()));
        }
        check_beta(beta)?;
        Ok(Self { weights, beta })
    }

    pub fn zeros(feature_dim: usize, beta: f64) -> Result<Self> {
        Self::new(vec![0.0; feature_dim], beta)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyModel {
    Tabular(TabularPolicy),
    Linear(LinearRewardModel),
}

impl PolicyModel {
    /// Untrained model for `data`: for the tabular backend the reference is
    /// fitted on winners first and the policy starts there.
    pub fn initial(backend: Backend, data: &PreferenceDataset, beta: f64) -> Result<Self> {
        match backend {
            Backend::Tabular => Ok(PolicyModel::Tabular(fit_reference(
                data,
                &ReferenceConfig {
                    beta,
                    ..ReferenceConfig::default()
                },
            )?)),
            Backend::Linear => {
                if data.feature_dim() == 0 {
                    return Err(Error::ShapeMismatch(
                        "linear backend needs a dataset with response features".into(),
                    ));
                }
                Ok(PolicyModel::Linear(LinearRewardModel::zeros(data.feature_dim(), beta)?))
            }
        }
    }

    pub fn backend(&self) -> Backend {
        match self {
            PolicyModel::Tabular(_) => Backend::Tabular,
            PolicyModel::Linear(_) => Backend::Linear,
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            PolicyModel::Tabular(m) => m.beta,
            PolicyModel::Linear(m) => m.beta,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            PolicyModel::Tabular(m) => &m.theta,
            PolicyModel::Linear(m) => &m.weights,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            PolicyModel::Tabular(m) => &mut m.theta,
            PolicyModel::Linear(m) => &mut m.weights,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Adds independent uniform `[-scale, scale)` noise to every parameter,
    /// drawn from the seed's instance stream.
    pub fn jitter(&mut self, seed: u64, scale: f64) {
        let mut rng = stream(seed, Purpose::Instance, 0);
        for p in self.params_mut() {
            *p += scale * (2.0 * rng.random::<f64>() - 1.0);
        }
    }

    pub fn check_compatible(&self, data: &PreferenceDataset) -> Result<()> {
        match self {
            PolicyModel::Tabular(m) => {
                if m.n_prompts != data.n_prompts() || m.n_responses != data.n_responses() {
                    return Err(Error::ShapeMismatch(format!(
                        "tabular model is {} x {}, dataset is {} x {}",
                        m.n_prompts,
                        m.n_responses,
                        data.n_prompts(),
                        data.n_responses()
                    )));
                }
            }
            PolicyModel::Linear(m) => {
                if m.weights.len() != data.feature_dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "linear model has {} weights, dataset feature_dim is {}",
                        m.weights.len(),
                        data.feature_dim()
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_index(&self, data: &PreferenceDataset, prompt: usize, response: usize) -> Result<()> {
        if prompt >= data.n_prompts() {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: prompt,
                len: data.n_prompts(),
            });
        }
        if response >= data.n_responses() {
            return Err(Error::IndexOutOfRange {
                what: "response",
                index: response,
                len: data.n_responses(),
            });
        }
        self.check_compatible(data)
    }

    /// `r̂(x, y)`: `β·(log π_θ(y|x) − log π_ref(y|x))` for the tabular
    /// backend, `β·wᵀφ(x, y)` for the linear one.
    pub fn implicit_reward(&self, data: &PreferenceDataset, prompt: usize, response: usize) -> Result<f64> {
        self.check_index(data, prompt, response)?;
        Ok(match self {
            PolicyModel::Tabular(m) => {
                m.beta * (m.log_prob(&m.theta, prompt, response) - m.log_prob(&m.ref_logits, prompt, response))
            }
            PolicyModel::Linear(m) => m.beta * math::dot(&m.weights, data.feature(prompt, response)),
        })
    }

    /// `g(s) = r̂(x, y_win) − r̂(x, y_lose)`.
    pub fn margin(&self, data: &PreferenceDataset, pair: &PreferencePair) -> Result<f64> {
        self.check_index(data, pair.prompt_id, pair.win_id)?;
        self.check_index(data, pair.prompt_id, pair.lose_id)?;
        Ok(self.margin_unchecked(data, pair))
    }

    /// Margin without index validation. Softmax normalizers of one prompt
    /// cancel, so the tabular margin is a difference of raw logits.
    pub(crate) fn margin_unchecked(&self, data: &PreferenceDataset, pair: &PreferencePair) -> f64 {
        match self {
            PolicyModel::Tabular(m) => {
                let base = pair.prompt_id * m.n_responses;
                let (w, l) = (base + pair.win_id, base + pair.lose_id);
                m.beta * ((m.theta[w] - m.theta[l]) - (m.ref_logits[w] - m.ref_logits[l]))
            }
            PolicyModel::Linear(m) => {
                let fw = data.feature(pair.prompt_id, pair.win_id);
                let fl = data.feature(pair.prompt_id, pair.lose_id);
                m.beta
                    * m.weights
                        .iter()
                        .zip(fw.iter().zip(fl))
                        .map(|(w, (a, b))| w * (a - b))
                        .sum::<f64>()
            }
        }
    }

    /// Adds `scale · ∇g(s)` into `grad`.
    pub(crate) fn add_margin_gradient(
        &self,
        data: &PreferenceDataset,
        pair: &PreferencePair,
        scale: f64,
        grad: &mut [f64],
    ) {
        match self {
            PolicyModel::Tabular(m) => {
                let base = pair.prompt_id * m.n_responses;
                grad[base + pair.win_id] += scale * m.beta;
                grad[base + pair.lose_id] -= scale * m.beta;
            }
            PolicyModel::Linear(m) => {
                let fw = data.feature(pair.prompt_id, pair.win_id);
                let fl = data.feature(pair.prompt_id, pair.lose_id);
                for (g, (a, b)) in grad.iter_mut().zip(fw.iter().zip(fl)) {
                    *g += scale * m.beta * (a - b);
                }
            }
        }
    }

    /// ∇_θ g(s). For the tabular backend the prompt row is `β(e_win − e_lose)`
    /// (the softmax terms of the two log-probabilities cancel) and every other
    /// row is zero; for the linear backend it is `β(φ_win − φ_lose)`.
    pub fn margin_gradient(&self, data: &PreferenceDataset, pair: &PreferencePair) -> Result<Vec<f64>> {
        self.margin(data, pair)?;
        let mut grad = vec![0.0; self.n_params()];
        self.add_margin_gradient(data, pair, 1.0, &mut grad);
        Ok(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConfig {
    /// Pseudo-count added to every response's win count.
    pub smoothing: f64,
    pub beta: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            smoothing: 1.0,
            beta: DEFAULT_BETA,
        }
    }
}

/// Reference policy from winners only: per prompt, the smoothed multinomial
/// MLE of which response wins. The policy starts equal to the reference.
pub fn fit_reference(data: &PreferenceDataset, config: &ReferenceConfig) -> Result<TabularPolicy> {
    if !(config.smoothing > 0.0) || !config.smoothing.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "smoothing must be positive, got {}",
            config.smoothing
        )));
    }
    let n_resp = data.n_responses();
    let mut counts = vec![config.smoothing; data.n_prompts() * n_resp];
    for pair in data.pairs() {
        counts[pair.prompt_id * n_resp + pair.win_id] += 1.0;
    }
    let mut logits = vec![0.0; counts.len()];
    for (row_counts, row_logits) in counts.chunks(n_resp).zip(logits.chunks_mut(n_resp)) {
        let total: f64 = row_counts.iter().sum();
        for (c, l) in row_counts.iter().zip(row_logits.iter_mut()) {
            *l = math::ln(c / total);
        }
    }
    TabularPolicy::new(data.n_prompts(), n_resp, logits.clone(), logits, config.beta)
}
