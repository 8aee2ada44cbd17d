//! Momentum gradient descent over any objective.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::PreferenceDataset;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Backend, PolicyModel};
use crate::objectives::{loss_and_grad, loss_and_grad_on, LossSpec};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    #[default]
    Full,
    Size(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: BatchSize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_tol: f64,
    pub seed: u64,
    /// Abort with `DescentViolation` if a full-batch epoch raises the loss.
    #[serde(default)]
    pub enforce_descent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            batch_size: BatchSize::Full,
            learning_rate: 0.05,
            momentum: 0.9,
            grad_tol: 1e-8,
            seed: 0,
            enforce_descent: false,
        }
    }
}

impl TrainConfig {
    /// Defaults with the backend's learning rate: 0.05 tabular, 0.5 linear.
    pub fn for_backend(backend: Backend) -> Self {
        let learning_rate = match backend {
            Backend::Tabular => 0.05,
            Backend::Linear => 0.5,
        };
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be positive".into()));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    /// Full-batch loss after each epoch.
    pub losses: Vec<f64>,
    /// Full-batch gradient norm after each epoch.
    pub grad_norms: Vec<f64>,
    pub initial_loss: f64,
    pub epochs_run: usize,
    /// Filled in by `std` builds only.
    pub wall_time_secs: Option<f64>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.initial_loss)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.grad_norms.last().copied().unwrap_or(f64::NAN)
    }
}

/// Trains a copy of `model` on `data`.
///
/// Each epoch walks the pairs in batches (reshuffled per epoch from the seed
/// unless the batch is the full dataset), applying
/// `v ← μv − η∇L_batch; θ ← θ + v`. After each epoch the full-batch loss and
/// gradient norm are recorded; training stops once that norm falls below
/// `grad_tol`.
pub fn fit(
    model: &PolicyModel,
    data: &PreferenceDataset,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<(PolicyModel, TrainTrace)> {
    #[cfg(feature = "std")]
    let started = std::time::Instant::now();
    #[allow(unused_mut)]
    let (model, mut trace) = descend(model, data, spec, config)?;
    #[cfg(feature = "std")]
    {
        trace.wall_time_secs = Some(started.elapsed().as_secs_f64());
    }
    Ok((model, trace))
}

fn descend(
    model: &PolicyModel,
    data: &PreferenceDataset,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<(PolicyModel, TrainTrace)> {
    config.validate()?;
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.check_compatible(data)?;

    let mut model = model.clone();
    let n = data.len();
    let batch = match config.batch_size {
        BatchSize::Full => n,
        BatchSize::Size(b) => b.min(n),
    };
    let diverged = |epoch, batch| Error::TrainingDiverged {
        variant: spec.name(),
        epoch,
        batch,
    };

    let initial = loss_and_grad(&model, data, spec).map_err(|_| diverged(0, 0))?;
    let mut trace = TrainTrace {
        initial_loss: initial.value,
        ..TrainTrace::default()
    };
    if math::norm(&initial.gradient) < config.grad_tol {
        return Ok((model, trace));
    }

    let mut velocity = vec![0.0; model.n_params()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut previous = initial.value;
    for epoch in 0..config.max_epochs {
        if batch < n {
            order.sort_unstable();
            order.shuffle(&mut stream(config.seed, Purpose::Shuffle, epoch as u64));
        }
        for (b, chunk) in order.chunks(batch).enumerate() {
            let step = loss_and_grad_on(&model, data, chunk, spec).map_err(|_| diverged(epoch, b))?;
            for ((p, v), g) in model.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&step.gradient) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
        }
        let full = loss_and_grad(&model, data, spec).map_err(|_| diverged(epoch, 0))?;
        let grad_norm = math::norm(&full.gradient);
        if !grad_norm.is_finite() {
            return Err(diverged(epoch, 0));
        }
        if config.enforce_descent && full.value > previous + 1e-12 * (1.0 + previous.abs()) {
            return Err(Error::DescentViolation {
                epoch,
                previous,
                current: full.value,
            });
        }
        previous = full.value;
        trace.losses.push(full.value);
        trace.grad_norms.push(grad_norm);
        trace.epochs_run = epoch + 1;
        if grad_norm < config.grad_tol {
            break;
        }
    }
    Ok((model, trace))
}

/// `1 − cos∠(w, θ*)` between the linear model's weights and the true reward
/// parameters; zero for any positive rescaling of `θ*`.
pub fn recovery_error(model: &PolicyModel, true_theta: &[f64]) -> Result<f64> {
    let weights = match model {
        PolicyModel::Linear(m) => m.weights(),
        PolicyModel::Tabular(_) => return Err(Error::WrongBackend { expected: "linear" }),
    };
    angular_error(weights, true_theta)
}

pub fn angular_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = math::norm(a);
    let nb = math::norm(b);
    if na == 0.0 {
        return Err(Error::ZeroVector("model weights"));
    }
    if nb == 0.0 {
        return Err(Error::ZeroVector("true_theta"));
    }
    let cos = (math::dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}
