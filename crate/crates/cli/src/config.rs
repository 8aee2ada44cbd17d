//! RunConfig: a TOML file whose sections mirror the library's spec types.
//! Every key is optional; command-line flags override file values, which
//! override built-in defaults. Unknown keys are rejected.
//!
//! ```toml
//! output_dir = "runs/a"
//! backend = "linear"
//!
//! [generator]
//! n_prompts = 200
//! n_responses_per_prompt = 4
//! feature_dim = 8
//! margin_floor = 3.0
//! seed = 1
//!
//! [contamination]
//! epsilon = 0.4
//!
//! [loss]
//! variant = "holder"
//! gamma = 2.0
//!
//! [model]
//! beta = 0.1
//!
//! [train]
//! max_epochs = 500
//! batch_size = "full"
//! learning_rate = 0.5
//!
//! [sweep]
//! variants = ["dpo", "holder"]
//! eps = [0.0, 0.2, 0.4]
//! seeds = [1, 2, 3]
//! detect_gamma = 2.0
//! ```

use std::path::{Path, PathBuf};

use hdpo_core::{BatchSize, HolderPhi, LossSpec};
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::formats::read_text;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub backend: Option<hdpo_core::Backend>,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub contamination: ContaminationSection,
    pub loss: Option<LossSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub n_prompts: Option<usize>,
    pub n_responses_per_prompt: Option<usize>,
    pub feature_dim: Option<usize>,
    pub true_theta: Option<Vec<f64>>,
    pub margin_floor: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSection {
    pub epsilon: Option<f64>,
    /// Defaults to the generator seed.
    pub seed: Option<u64>,
}

/// Flat loss record: `variant` plus whichever hyperparameters it owns.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub variant: String,
    pub c: Option<f64>,
    pub beta_prime: Option<f64>,
    pub gamma: Option<f64>,
    pub phi: Option<HolderPhi>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BatchField {
    Size(usize),
    Word(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: Option<usize>,
    pub batch_size: Option<BatchField>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub grad_tol: Option<f64>,
    pub seed: Option<u64>,
    pub enforce_descent: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variants: Option<Vec<String>>,
    pub eps: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub detect_gamma: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })
    }
}

/// `"full"` or a positive count.
pub fn parse_batch(text: &str) -> Result<BatchSize, String> {
    if text == "full" {
        return Ok(BatchSize::Full);
    }
    match text.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("batch size must be \"full\" or a positive integer, got {text:?}")),
        Ok(n) => Ok(BatchSize::Size(n)),
    }
}

impl BatchField {
    pub fn resolve(&self) -> Result<BatchSize, String> {
        match self {
            BatchField::Size(n) => parse_batch(&n.to_string()),
            BatchField::Word(w) => parse_batch(w),
        }
    }
}

/// Hyperparameter overrides that apply to whichever variant owns them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParams {
    pub c: Option<f64>,
    pub beta_prime: Option<f64>,
    pub gamma: Option<f64>,
    pub phi: Option<HolderPhi>,
}

impl LossParams {
    /// `self` wins over `other`.
    pub fn or(self, other: LossParams) -> LossParams {
        LossParams {
            c: self.c.or(other.c),
            beta_prime: self.beta_prime.or(other.beta_prime),
            gamma: self.gamma.or(other.gamma),
            phi: self.phi.or(other.phi),
        }
    }
}

impl LossSection {
    pub fn params(&self) -> LossParams {
        LossParams {
            c: self.c,
            beta_prime: self.beta_prime,
            gamma: self.gamma,
            phi: self.phi,
        }
    }
}

/// Builds a loss from its name, rejecting hyperparameters it does not own.
pub fn build_loss(variant: &str, params: LossParams, strict: bool) -> Result<LossSpec, String> {
    let base = match variant {
        "dpo" | "ipo" | "cdpo" | "rdpo" | "drdpo" | "holder" => LossSpec::from_name(variant).expect("known name"),
        other => {
            return Err(format!(
                "unknown variant {other:?} (expected dpo, ipo, cdpo, rdpo, drdpo or holder)"
            ))
        }
    };
    let foreign = |name: &str| Err(format!("{name} does not apply to variant {variant}"));
    let spec = match base {
        LossSpec::Cdpo { c } | LossSpec::Rdpo { c } => {
            if strict && (params.beta_prime.is_some() || params.gamma.is_some() || params.phi.is_some()) {
                return foreign("beta_prime/gamma/phi");
            }
            let c = params.c.unwrap_or(c);
            if variant == "cdpo" {
                LossSpec::Cdpo { c }
            } else {
                LossSpec::Rdpo { c }
            }
        }
        LossSpec::Drdpo { beta_prime } => {
            if strict && (params.c.is_some() || params.gamma.is_some() || params.phi.is_some()) {
                return foreign("c/gamma/phi");
            }
            LossSpec::Drdpo {
                beta_prime: params.beta_prime.unwrap_or(beta_prime),
            }
        }
        LossSpec::Holder { gamma, phi } => {
            if strict && (params.c.is_some() || params.beta_prime.is_some()) {
                return foreign("c/beta_prime");
            }
            LossSpec::Holder {
                gamma: params.gamma.unwrap_or(gamma),
                phi: params.phi.unwrap_or(phi),
            }
        }
        plain => {
            if strict && params != LossParams::default() {
                return foreign("c/beta_prime/gamma/phi");
            }
            plain
        }
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}
