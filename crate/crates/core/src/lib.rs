//! Robust preference optimization over small Bradley-Terry models.
//!
//! The crate implements the Hölder-DPO objective (density-power and
//! pseudo-spherical instances) next to five baseline objectives (DPO, IPO,
//! cDPO, R-DPO, Dr. DPO), a label-flip contamination simulator, the
//! closed-form clean-proportion estimator and the mislabel detector built on
//! it, and the per-sample influence weights that separate bounded objectives
//! from redescending ones.
//!
//! Everything here is pure computation over `alloc` collections, so the crate
//! builds without `std`. File formats, configuration and the command-line
//! driver live in the `hdpo` crate.
#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod data;
pub mod error;
pub mod evalkit;
pub mod influence;
pub mod math;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod training;
pub mod valuation;

pub use data::{
    contaminate, flip_pairs, generate_clean, ContaminationSpec, DatasetMeta, GeneratorSpec,
    PreferenceDataset, PreferencePair,
};
pub use error::{Error, Result};
pub use evalkit::{
    avg_true_reward, detection_metrics, run_cell, run_cleaning_cell, run_sweep, CellMetrics,
    CleaningOutcome, DetectionMetrics, ExperimentSpec, SweepCell, SweepResult,
};
pub use influence::{if_curve, if_weight, redescending_check, IfCurve};
pub use model::{fit_reference, Backend, LinearRewardModel, PolicyModel, ReferenceConfig, TabularPolicy};
pub use objectives::{gradient_check, likelihood, loss_and_grad, BatchLoss, HolderPhi, LossSpec};
pub use training::{fit, recovery_error, BatchSize, TrainConfig, TrainTrace};
pub use valuation::{clean, detect, epsilon_hat, xi_hat, ValuationReport};
