//! Metrics and seeded experiment grids.

use alloc::string::{String, ToString};
use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{contaminate, generate_clean, ContaminationSpec, GeneratorSpec, PreferenceDataset};
use crate::error::{Error, Result};
use crate::model::{Backend, PolicyModel, DEFAULT_BETA};
use crate::objectives::{LossSpec, DEFAULT_GAMMA};
use crate::training::{fit, recovery_error, TrainConfig};
use crate::valuation::{clean, detect, ValuationReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    /// Zero when nothing is flagged; check `n_flagged` to tell the cases apart.
    pub precision: f64,
    pub recall: f64,
    pub epsilon_true: f64,
    pub epsilon_hat: f64,
    pub n_flagged: usize,
}

/// Precision and recall of the flagged set against the ground-truth flips.
pub fn detection_metrics(report: &ValuationReport, data: &PreferenceDataset) -> Result<DetectionMetrics> {
    if !data.meta.has_ground_truth {
        return Err(Error::MissingGroundTruth);
    }
    if report.n() != data.len() {
        return Err(Error::ReportMismatch {
            report: report.n(),
            data: data.len(),
        });
    }
    let pairs = data.pairs();
    let n_true = data.n_flipped();
    let mut hits = 0usize;
    for &i in &report.flagged {
        let pair = pairs.get(i).ok_or(Error::IndexOutOfRange {
            what: "flagged pair",
            index: i,
            len: pairs.len(),
        })?;
        if pair.truth_flipped {
            hits += 1;
        }
    }
    let n_flagged = report.flagged.len();
    Ok(DetectionMetrics {
        precision: hits as f64 / n_flagged.max(1) as f64,
        recall: hits as f64 / n_true.max(1) as f64,
        epsilon_true: n_true as f64 / data.len() as f64,
        epsilon_hat: report.epsilon_hat,
        n_flagged,
    })
}

fn checked_theta<'a>(data: &PreferenceDataset, true_theta: Option<&'a [f64]>) -> Result<&'a [f64]> {
    let theta = true_theta.ok_or(Error::MissingTrueTheta)?;
    if data.feature_dim() == 0 || theta.len() != data.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "true_theta has length {}, dataset feature_dim is {}",
            theta.len(),
            data.feature_dim()
        )));
    }
    Ok(theta)
}

/// Mean over prompts of the true reward of the response the model ranks
/// highest (first index on ties).
pub fn avg_true_reward(model: &PolicyModel, data: &PreferenceDataset, true_theta: Option<&[f64]>) -> Result<f64> {
    let theta = checked_theta(data, true_theta)?;
    let mut total = 0.0;
    for prompt in 0..data.n_prompts() {
        let mut best = 0;
        let mut best_reward = model.implicit_reward(data, prompt, 0)?;
        for response in 1..data.n_responses() {
            let r = model.implicit_reward(data, prompt, response)?;
            if r > best_reward {
                best = response;
                best_reward = r;
            }
        }
        total += data.true_reward(theta, prompt, best);
    }
    Ok(total / data.n_prompts() as f64)
}

/// Mean per-prompt (minimum, maximum) of the true reward: the range
/// `avg_true_reward` can take.
pub fn true_reward_bounds(data: &PreferenceDataset, true_theta: Option<&[f64]>) -> Result<(f64, f64)> {
    let theta = checked_theta(data, true_theta)?;
    let mut lo = 0.0;
    let mut hi = 0.0;
    for prompt in 0..data.n_prompts() {
        let rewards = (0..data.n_responses()).map(|r| data.true_reward(theta, prompt, r));
        let (min, max) = rewards.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
        lo += min;
        hi += max;
    }
    let n = data.n_prompts() as f64;
    Ok((lo / n, hi / n))
}

/// Everything a sweep cell needs besides its (variant, ε, seed) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// The seed field is replaced by the cell seed.
    pub generator: GeneratorSpec,
    pub backend: Backend,
    pub beta: f64,
    /// The seed field is replaced by the cell seed.
    pub train: TrainConfig,
    /// γ used by the detector, whatever the training objective.
    pub detect_gamma: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            backend: Backend::Linear,
            beta: DEFAULT_BETA,
            train: TrainConfig::for_backend(Backend::Linear),
            detect_gamma: DEFAULT_GAMMA,
        }
    }
}

impl ExperimentSpec {
    /// Clean data, contaminated copy, for one cell.
    pub fn datasets(&self, epsilon: f64, seed: u64) -> Result<(PreferenceDataset, PreferenceDataset)> {
        let generator = GeneratorSpec {
            seed,
            ..self.generator.clone()
        };
        let clean_data = generate_clean(&generator)?;
        let dirty = contaminate(&clean_data, &ContaminationSpec::new(epsilon, seed)?)?;
        Ok((clean_data, dirty))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train }
    }

    /// Initial model for `data` followed by training under `variant`.
    pub fn train(&self, variant: &LossSpec, data: &PreferenceDataset, seed: u64) -> Result<PolicyModel> {
        let initial = PolicyModel::initial(self.backend, data, self.beta)?;
        Ok(fit(&initial, data, variant, &self.train_config(seed))?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    /// NaN for the tabular backend.
    pub recovery_error: f64,
    pub avg_true_reward: f64,
    pub epsilon_hat: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RecoveryError,
    AvgTrueReward,
    EpsilonHat,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::RecoveryError,
        Metric::AvgTrueReward,
        Metric::EpsilonHat,
        Metric::Precision,
        Metric::Recall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::RecoveryError => "recovery_error",
            Metric::AvgTrueReward => "avg_true_reward",
            Metric::EpsilonHat => "epsilon_hat",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
        }
    }

    pub fn of(self, m: &CellMetrics) -> f64 {
        match self {
            Metric::RecoveryError => m.recovery_error,
            Metric::AvgTrueReward => m.avg_true_reward,
            Metric::EpsilonHat => m.epsilon_hat,
            Metric::Precision => m.precision,
            Metric::Recall => m.recall,
        }
    }
}

fn in_cell<T>(variant: &LossSpec, epsilon: f64, seed: u64, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Cell {
        variant: variant.name().to_string(),
        epsilon,
        seed,
        source: Box::new(e),
    })
}

/// Generate, contaminate, fit the reference, train, detect and score.
pub fn run_cell(variant: &LossSpec, epsilon: f64, seed: u64, base: &ExperimentSpec) -> Result<CellMetrics> {
    let outcome = (|| {
        let (_, dirty) = base.datasets(epsilon, seed)?;
        let model = base.train(variant, &dirty, seed)?;
        let report = detect(&model, &dirty, base.detect_gamma)?;
        let detection = detection_metrics(&report, &dirty)?;
        let theta = dirty.meta.true_theta.as_deref();
        let recovery = match model.backend() {
            Backend::Linear => recovery_error(&model, theta.ok_or(Error::MissingTrueTheta)?)?,
            Backend::Tabular => f64::NAN,
        };
        Ok(CellMetrics {
            recovery_error: recovery,
            avg_true_reward: avg_true_reward(&model, &dirty, theta)?,
            epsilon_hat: detection.epsilon_hat,
            precision: detection.precision,
            recall: detection.recall,
            n_flagged: detection.n_flagged,
        })
    })();
    in_cell(variant, epsilon, seed, outcome)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub variant: usize,
    pub epsilon: usize,
    pub seed: usize,
    pub metrics: CellMetrics,
}

/// Every (variant, ε, seed) cell, stored variant-major, then ε, then seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub variants: Vec<LossSpec>,
    pub eps_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    /// Grid coordinates in storage order.
    pub fn coordinates(n_variants: usize, n_eps: usize, n_seeds: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(n_variants * n_eps * n_seeds);
        for v in 0..n_variants {
            for e in 0..n_eps {
                for s in 0..n_seeds {
                    out.push((v, e, s));
                }
            }
        }
        out
    }

    /// Assembles a result from metrics listed in `coordinates` order.
    pub fn from_metrics(
        variants: Vec<LossSpec>,
        eps_grid: Vec<f64>,
        seeds: Vec<u64>,
        metrics: Vec<CellMetrics>,
    ) -> Result<Self> {
        let coords = Self::coordinates(variants.len(), eps_grid.len(), seeds.len());
        if coords.len() != metrics.len() {
            return Err(Error::InvalidConfig(format!(
                "sweep has {} cells but {} results",
                coords.len(),
                metrics.len()
            )));
        }
        let cells = coords
            .into_iter()
            .zip(metrics)
            .map(|((variant, epsilon, seed), metrics)| SweepCell {
                variant,
                epsilon,
                seed,
                metrics,
            })
            .collect();
        Ok(Self {
            variants,
            eps_grid,
            seeds,
            cells,
        })
    }

    pub fn cell(&self, variant: usize, epsilon: usize, seed: usize) -> &SweepCell {
        let n_seeds = self.seeds.len();
        &self.cells[(variant * self.eps_grid.len() + epsilon) * n_seeds + seed]
    }

    /// Metric values across seeds for one (variant, ε).
    pub fn values(&self, metric: Metric, variant: usize, epsilon: usize) -> Vec<f64> {
        (0..self.seeds.len())
            .map(|s| metric.of(&self.cell(variant, epsilon, s).metrics))
            .collect()
    }

    pub fn median(&self, metric: Metric, variant: usize, epsilon: usize) -> f64 {
        median(&self.values(metric, variant, epsilon))
    }

    pub fn variant_index(&self, name: &str) -> Option<usize> {
        self.variants.iter().position(|v| v.name() == name)
    }

    pub fn eps_index(&self, epsilon: f64) -> Option<usize> {
        self.eps_grid.iter().position(|e| (e - epsilon).abs() < 1e-12)
    }
}

pub fn validate_grid(variants: &[LossSpec], eps_grid: &[f64], seeds: &[u64]) -> Result<()> {
    if variants.is_empty() || eps_grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
    }
    for v in variants {
        v.validate()?;
    }
    for e in eps_grid {
        ContaminationSpec::new(*e, 0)?;
    }
    Ok(())
}

/// Runs every cell in order on the calling thread.
pub fn run_sweep(variants: &[LossSpec], eps_grid: &[f64], seeds: &[u64], base: &ExperimentSpec) -> Result<SweepResult> {
    validate_grid(variants, eps_grid, seeds)?;
    let metrics = SweepResult::coordinates(variants.len(), eps_grid.len(), seeds.len())
        .into_iter()
        .map(|(v, e, s)| run_cell(&variants[v], eps_grid[e], seeds[s], base))
        .collect::<Result<Vec<_>>>()?;
    SweepResult::from_metrics(variants.to_vec(), eps_grid.to_vec(), seeds.to_vec(), metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningOutcome {
    /// Downstream objective trained on the contaminated data.
    pub reward_noisy: f64,
    /// Same objective trained after removing the detector's flagged pairs.
    pub reward_cleaned: f64,
    pub detection: DetectionMetrics,
    pub n_removed: usize,
}

/// Two-stage pipeline: a robust model flags suspected mislabels, they are
/// removed, and the downstream objective is retrained on what remains.
pub fn run_cleaning_cell(
    filter: &LossSpec,
    downstream: &LossSpec,
    epsilon: f64,
    seed: u64,
    base: &ExperimentSpec,
) -> Result<CleaningOutcome> {
    let outcome = (|| {
        let (_, dirty) = base.datasets(epsilon, seed)?;
        let theta = dirty.meta.true_theta.clone();
        let filter_model = base.train(filter, &dirty, seed)?;
        let report = detect(&filter_model, &dirty, base.detect_gamma)?;
        let detection = detection_metrics(&report, &dirty)?;
        let cleaned = clean(&dirty, &report)?;
        let noisy_model = base.train(downstream, &dirty, seed)?;
        let cleaned_model = base.train(downstream, &cleaned, seed)?;
        Ok(CleaningOutcome {
            reward_noisy: avg_true_reward(&noisy_model, &dirty, theta.as_deref())?,
            reward_cleaned: avg_true_reward(&cleaned_model, &cleaned, theta.as_deref())?,
            detection,
            n_removed: report.flagged.len(),
        })
    })();
    in_cell(downstream, epsilon, seed, outcome)
}

/// Median with the two middle values averaged; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1); zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    crate::math::sqrt(ss / (values.len() - 1) as f64)
}

/// `"dpo"`-style label used in exported tables.
pub fn variant_label(spec: &LossSpec) -> String {
    spec.name().to_string()
}
