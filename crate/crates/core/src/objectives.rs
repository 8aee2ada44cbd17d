//! Preference objectives, their values and exact parameter gradients.
//!
//! Every objective is a function of the per-pair margins `g⁽ⁱ⁾`, so each one
//! is evaluated as "value from margins, then ∂L/∂g⁽ⁱ⁾", and the parameter
//! gradient is `Σᵢ ∂L/∂g⁽ⁱ⁾ · ∇g⁽ⁱ⁾`. Sums run in pair order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{PreferenceDataset, PreferencePair};
use crate::error::{Error, Result};
use crate::math::{self, log_sigmoid, sigmoid, sigmoid_pow, softplus};
use crate::model::PolicyModel;

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_C: f64 = 0.25;
pub const DEFAULT_BETA_PRIME: f64 = 1.0;

/// The `φ` inside the Hölder score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HolderPhi {
    /// `φ(h) = γ − (1 + γ)h`, density power.
    #[default]
    Dp,
    /// `φ(h) = −h^{1+γ}`, pseudo-spherical.
    Ps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum LossSpec {
    Dpo,
    Ipo,
    Cdpo { c: f64 },
    Rdpo { c: f64 },
    Drdpo { beta_prime: f64 },
    Holder { gamma: f64, phi: HolderPhi },
}

impl LossSpec {
    pub fn holder(gamma: f64) -> Self {
        LossSpec::Holder {
            gamma,
            phi: HolderPhi::Dp,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Dpo => "dpo",
            LossSpec::Ipo => "ipo",
            LossSpec::Cdpo { .. } => "cdpo",
            LossSpec::Rdpo { .. } => "rdpo",
            LossSpec::Drdpo { .. } => "drdpo",
            LossSpec::Holder { phi: HolderPhi::Dp, .. } => "holder",
            LossSpec::Holder { phi: HolderPhi::Ps, .. } => "holder-ps",
        }
    }

    /// The variant with its default hyperparameters, looked up by name.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "dpo" => LossSpec::Dpo,
            "ipo" => LossSpec::Ipo,
            "cdpo" => LossSpec::Cdpo { c: DEFAULT_C },
            "rdpo" => LossSpec::Rdpo { c: DEFAULT_C },
            "drdpo" => LossSpec::Drdpo {
                beta_prime: DEFAULT_BETA_PRIME,
            },
            "holder" => LossSpec::holder(DEFAULT_GAMMA),
            "holder-ps" => LossSpec::Holder {
                gamma: DEFAULT_GAMMA,
                phi: HolderPhi::Ps,
            },
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Cdpo { c } | LossSpec::Rdpo { c } if !(0.0..0.5).contains(&c) => {
                Err(Error::InvalidConfig(format!("c must lie in [0, 0.5), got {c}")))
            }
            LossSpec::Drdpo { beta_prime } if !(beta_prime > 0.0 && beta_prime.is_finite()) => Err(
                Error::InvalidConfig(format!("beta_prime must be positive, got {beta_prime}")),
            ),
            LossSpec::Holder { gamma, .. } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

/// `σ(g(s))`, the model's likelihood that the stored label is the clean one.
pub fn likelihood(model: &PolicyModel, data: &PreferenceDataset, pair: &PreferencePair) -> Result<f64> {
    Ok(sigmoid(model.margin(data, pair)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub per_sample_likelihood: Vec<f64>,
}

/// Loss value and `∂L/∂gᵢ` for a batch of margins.
///
/// `beta` is the policy strength, consulted only by IPO.
pub fn value_and_margin_grad(spec: &LossSpec, beta: f64, margins: &[f64]) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    let n = margins.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(index) = margins.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "margin", index });
    }
    let inv_n = 1.0 / n as f64;
    let mut dg = vec![0.0; n];
    let value = match *spec {
        LossSpec::Dpo => {
            let mut total = 0.0;
            for (g, d) in margins.iter().zip(dg.iter_mut()) {
                total += softplus(-g);
                *d = -sigmoid(-g) * inv_n;
            }
            total * inv_n
        }
        LossSpec::Ipo => {
            let mut total = 0.0;
            for (g, d) in margins.iter().zip(dg.iter_mut()) {
                let residual = g / beta - 1.0 / (2.0 * beta);
                total += residual * residual;
                *d = 2.0 * residual / beta * inv_n;
            }
            total * inv_n
        }
        LossSpec::Cdpo { c } => conservative(margins, &mut dg, 1.0 - c, c),
        LossSpec::Rdpo { c } => conservative(margins, &mut dg, (1.0 - c) / (1.0 - 2.0 * c), c / (1.0 - 2.0 * c)),
        LossSpec::Drdpo { beta_prime } => {
            // −β′ ln( (1/N) Σ exp(ln σ(g)/β′) ); the batch softmax of the
            // scaled log-likelihoods weights each sample's DPO gradient.
            let scaled: Vec<f64> = margins.iter().map(|g| log_sigmoid(*g) / beta_prime).collect();
            let lse = math::log_sum_exp(&scaled);
            for ((g, a), d) in margins.iter().zip(&scaled).zip(dg.iter_mut()) {
                *d = -math::exp(a - lse) * sigmoid(-g);
            }
            -beta_prime * (lse - math::ln(n as f64))
        }
        LossSpec::Holder { gamma, phi: HolderPhi::Dp } => {
            let mut total = 0.0;
            for (g, d) in margins.iter().zip(dg.iter_mut()) {
                let s_gamma = sigmoid_pow(*g, gamma);
                let s = sigmoid(*g);
                let q = sigmoid(-g);
                total += -(1.0 + gamma) * s_gamma + gamma * s_gamma * s;
                *d = -gamma * (1.0 + gamma) * s_gamma * q * q * inv_n;
            }
            total * inv_n
        }
        LossSpec::Holder { gamma, phi: HolderPhi::Ps } => {
            // −A / B^p with A = mean σ^γ, B = mean σ^{1+γ}, p = γ/(1+γ).
            let p = gamma / (1.0 + gamma);
            let mut a = 0.0;
            let mut b = 0.0;
            for g in margins {
                let s_gamma = sigmoid_pow(*g, gamma);
                a += s_gamma;
                b += s_gamma * sigmoid(*g);
            }
            a *= inv_n;
            b *= inv_n;
            let b_pow = math::powf(b, p);
            for (g, d) in margins.iter().zip(dg.iter_mut()) {
                let s_gamma = sigmoid_pow(*g, gamma);
                let q = sigmoid(-g);
                let da = gamma * s_gamma * q * inv_n;
                let db = (1.0 + gamma) * s_gamma * sigmoid(*g) * q * inv_n;
                *d = -(da / b_pow - p * a * db / (b_pow * b));
            }
            -a / b_pow
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "loss", index: 0 });
    }
    if let Some(index) = dg.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", index });
    }
    Ok((value, dg))
}

/// `w_pos·mean[−ln σ(g)] − w_neg·mean[−ln σ(−g)]`.
fn conservative(margins: &[f64], dg: &mut [f64], w_pos: f64, w_neg: f64) -> f64 {
    let inv_n = 1.0 / margins.len() as f64;
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (g, d) in margins.iter().zip(dg.iter_mut()) {
        pos += softplus(-g);
        neg += softplus(*g);
        *d = (-w_pos * sigmoid(-g) - w_neg * sigmoid(*g)) * inv_n;
    }
    (w_pos * pos - w_neg * neg) * inv_n
}

/// Loss over the pairs at `indices` (a minibatch).
pub fn loss_and_grad_on(
    model: &PolicyModel,
    data: &PreferenceDataset,
    indices: &[usize],
    spec: &LossSpec,
) -> Result<BatchLoss> {
    model.check_compatible(data)?;
    let pairs = data.pairs();
    let mut margins = Vec::with_capacity(indices.len());
    for &i in indices {
        let pair = pairs.get(i).ok_or(Error::IndexOutOfRange {
            what: "pair",
            index: i,
            len: pairs.len(),
        })?;
        margins.push(model.margin_unchecked(data, pair));
    }
    let (value, dg) = value_and_margin_grad(spec, model.beta(), &margins)?;
    let mut gradient = vec![0.0; model.n_params()];
    for (&i, d) in indices.iter().zip(&dg) {
        model.add_margin_gradient(data, &pairs[i], *d, &mut gradient);
    }
    Ok(BatchLoss {
        value,
        gradient,
        per_sample_likelihood: margins.iter().map(|g| sigmoid(*g)).collect(),
    })
}

/// Loss, gradient and per-pair likelihoods over the whole dataset.
pub fn loss_and_grad(model: &PolicyModel, data: &PreferenceDataset, spec: &LossSpec) -> Result<BatchLoss> {
    let indices: Vec<usize> = (0..data.len()).collect();
    loss_and_grad_on(model, data, &indices, spec)
}

/// Per-sample DPO gradient `−σ(−g)·∇g`.
pub fn dpo_sample_gradient(model: &PolicyModel, data: &PreferenceDataset, pair: &PreferencePair) -> Result<Vec<f64>> {
    let g = model.margin(data, pair)?;
    let mut grad = vec![0.0; model.n_params()];
    model.add_margin_gradient(data, pair, -sigmoid(-g), &mut grad);
    Ok(grad)
}

/// Per-sample gradient of the first density-power term `−(1+γ)σ(g)^γ`,
/// i.e. `−γ(1+γ)σ(g)^γ(1 − σ(g))·∇g`.
pub fn holder_first_term_gradient(
    model: &PolicyModel,
    data: &PreferenceDataset,
    pair: &PreferencePair,
    gamma: f64,
) -> Result<Vec<f64>> {
    let g = model.margin(data, pair)?;
    let mut grad = vec![0.0; model.n_params()];
    let scale = -gamma * (1.0 + gamma) * sigmoid_pow(g, gamma) * sigmoid(-g);
    model.add_margin_gradient(data, pair, scale, &mut grad);
    Ok(grad)
}

/// Relative-error denominator floor for `gradient_check`, so coordinates
/// whose true derivative is zero compare on an absolute scale.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-4;

/// Largest relative disagreement between the analytic gradient and central
/// finite differences of the loss value, over all parameters.
pub fn gradient_check(model: &PolicyModel, data: &PreferenceDataset, spec: &LossSpec, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
    }
    let analytic = loss_and_grad(model, data, spec)?.gradient;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let original = probe.params()[k];
        probe.params_mut()[k] = original + step;
        let up = loss_and_grad(&probe, data, spec)?.value;
        probe.params_mut()[k] = original - step;
        let down = loss_and_grad(&probe, data, spec)?.value;
        probe.params_mut()[k] = original;
        let numeric = (up - down) / (2.0 * step);
        let denom = a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
