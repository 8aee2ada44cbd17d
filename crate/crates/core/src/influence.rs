//! Influence weights: the scalar each objective multiplies onto the gradient
//! direction of a single flipped pair, as a function of its margin.
//!
//! An objective is redescending when this weight vanishes as the margin of a
//! flipped pair goes to −∞. Only the Hölder objective has that property; the
//! others tend to a positive constant (DPO, cDPO, R-DPO, Dr. DPO) or grow
//! without bound (IPO).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{sigmoid, sigmoid_pow};
use crate::objectives::LossSpec;

/// Per-sample influence weight `w(g)`.
///
/// `beta` is only used by IPO. Dr. DPO is evaluated for a point-mass flip
/// distribution, where its batch weight is exactly one. IPO's weight is
/// reported as a magnitude.
pub fn if_weight(spec: &LossSpec, beta: f64, g: f64) -> f64 {
    match *spec {
        LossSpec::Dpo | LossSpec::Drdpo { .. } => sigmoid(-g),
        LossSpec::Ipo => (2.0 * (g / beta - 1.0 / (2.0 * beta))).abs(),
        LossSpec::Cdpo { c } => (1.0 - c) * sigmoid(-g) + c * sigmoid(g),
        LossSpec::Rdpo { c } => ((1.0 - c) * sigmoid(-g) + c * sigmoid(g)) / (1.0 - 2.0 * c),
        LossSpec::Holder { gamma, .. } => sigmoid_pow(g, gamma) * sigmoid(-g),
    }
}

/// True for objectives whose influence weight is unbounded in the margin.
pub fn diverges(spec: &LossSpec) -> bool {
    matches!(spec, LossSpec::Ipo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfCurve {
    pub variant: LossSpec,
    pub beta: f64,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// Set for objectives whose weight grows without bound.
    pub divergent: bool,
}

impl IfCurve {
    /// Grid point and weight of the largest weight (first one on ties).
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        (self.grid[best], self.weights[best])
    }
}

/// Influence weights on `n_points` evenly spaced margins over `[g_min, g_max]`.
pub fn if_curve(spec: &LossSpec, beta: f64, g_min: f64, g_max: f64, n_points: usize) -> Result<IfCurve> {
    spec.validate()?;
    if !(g_min < g_max) || !g_min.is_finite() || !g_max.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "curve range must satisfy g_min < g_max, got [{g_min}, {g_max}]"
        )));
    }
    if n_points < 2 {
        return Err(Error::InvalidConfig(format!("curve needs at least 2 points, got {n_points}")));
    }
    let step = (g_max - g_min) / (n_points - 1) as f64;
    let grid: Vec<f64> = (0..n_points)
        .map(|i| if i + 1 == n_points { g_max } else { g_min + i as f64 * step })
        .collect();
    let weights = grid.iter().map(|g| if_weight(spec, beta, *g)).collect();
    Ok(IfCurve {
        variant: *spec,
        beta,
        grid,
        weights,
        divergent: diverges(spec),
    })
}

/// Whether the influence weight at a far-adversarial margin has fallen
/// below `tol`. Divergent objectives never pass.
pub fn redescending_check(spec: &LossSpec, beta: f64, g_probe: f64, tol: f64) -> Result<bool> {
    spec.validate()?;
    if !(g_probe <= -20.0) {
        return Err(Error::InvalidConfig(format!(
            "probe margin must be at most -20, got {g_probe}"
        )));
    }
    if diverges(spec) {
        return Ok(false);
    }
    Ok(if_weight(spec, beta, g_probe) < tol)
}
