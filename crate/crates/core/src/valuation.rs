//! Clean-proportion estimation and mislabel detection from a trained model.
//!
//! The extended model `ξ·σ(g)` absorbs the clean-data proportion into a
//! scale `ξ`. For the density-power score the optimal `ξ` at fixed `θ` has a
//! closed form; normalizing the likelihoods by their mean keeps the estimate
//! inside `(0, 1]`.

use alloc::format;
use alloc::vec::Vec;

use crate::data::PreferenceDataset;
use crate::error::{Error, Result};
use crate::math::{self, floor_count};
use crate::model::PolicyModel;
use crate::objectives::{likelihood, HolderPhi};

fn check_likelihoods(likelihoods: &[f64], gamma: f64) -> Result<()> {
    if likelihoods.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
    }
    for (index, &value) in likelihoods.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::LikelihoodDomain { index, value });
        }
    }
    Ok(())
}

/// Normalized estimate `ξ̂ = [(1/N) Σ σ̄ᵢ^γ] / Σ σ̄ᵢ^{1+γ}` with
/// `σ̄ᵢ = σᵢ / Σⱼ σⱼ`. Always in `(0, 1]`.
pub fn xi_hat(likelihoods: &[f64], gamma: f64) -> Result<f64> {
    check_likelihoods(likelihoods, gamma)?;
    let n = likelihoods.len() as f64;
    let total: f64 = likelihoods.iter().sum();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for s in likelihoods {
        let normalized = s / total;
        let pow_gamma = math::powf(normalized, gamma);
        numerator += pow_gamma;
        denominator += pow_gamma * normalized;
    }
    // Chebyshev's sum inequality bounds the exact value by one; clamp the
    // rounding excess.
    Ok((numerator / n / denominator).min(1.0))
}

/// Unnormalized `Σ σᵢ^γ / Σ σᵢ^{1+γ}`, which is never below one. Kept for
/// diagnostics only.
pub fn xi_hat_raw(likelihoods: &[f64], gamma: f64) -> Result<f64> {
    check_likelihoods(likelihoods, gamma)?;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for s in likelihoods {
        let pow_gamma = math::powf(*s, gamma);
        numerator += pow_gamma;
        denominator += pow_gamma * s;
    }
    Ok(numerator / denominator)
}

/// `ε̂ = 1 − ξ̂`, clamped to `[0, 1]`.
pub fn epsilon_hat(xi: f64) -> f64 {
    (1.0 - xi).clamp(0.0, 1.0)
}

/// Empirical Hölder score of the extended model `ξ·uᵢ`, `uᵢ = σᵢ / mean(σ)`,
/// against the empirical data distribution.
///
/// For `Dp` this is `γ·mean((ξu)^{1+γ}) − (1+γ)·mean((ξu)^γ)`, minimized at
/// `ξ = xi_hat`. For `Ps` it is
/// `−mean((ξu)^γ) / mean((ξu)^{1+γ})^{γ/(1+γ)}`, which does not depend on `ξ`.
pub fn extended_objective(phi: HolderPhi, likelihoods: &[f64], gamma: f64, xi: f64) -> Result<f64> {
    check_likelihoods(likelihoods, gamma)?;
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidConfig(format!("xi must be positive, got {xi}")));
    }
    let n = likelihoods.len() as f64;
    let mean = likelihoods.iter().sum::<f64>() / n;
    let mut m_gamma = 0.0;
    let mut m_gamma1 = 0.0;
    for s in likelihoods {
        let scaled = xi * s / mean;
        let pow_gamma = math::powf(scaled, gamma);
        m_gamma += pow_gamma;
        m_gamma1 += pow_gamma * scaled;
    }
    m_gamma /= n;
    m_gamma1 /= n;
    Ok(match phi {
        HolderPhi::Dp => gamma * m_gamma1 - (1.0 + gamma) * m_gamma,
        HolderPhi::Ps => -m_gamma / math::powf(m_gamma1, gamma / (1.0 + gamma)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValuationReport {
    pub gamma: f64,
    pub xi_hat: f64,
    pub epsilon_hat: f64,
    pub likelihoods: Vec<f64>,
    /// Pair indices, ascending by likelihood, ties by index.
    pub ranking: Vec<usize>,
    /// The first `⌊N·ε̂⌋` entries of `ranking`.
    pub flagged: Vec<usize>,
}

impl ValuationReport {
    pub fn from_likelihoods(likelihoods: Vec<f64>, gamma: f64) -> Result<Self> {
        let xi = xi_hat(&likelihoods, gamma)?;
        let eps = epsilon_hat(xi);
        let mut ranking: Vec<usize> = (0..likelihoods.len()).collect();
        ranking.sort_by(|&a, &b| likelihoods[a].total_cmp(&likelihoods[b]).then(a.cmp(&b)));
        let flagged = ranking[..floor_count(likelihoods.len(), eps)].to_vec();
        Ok(Self {
            gamma,
            xi_hat: xi,
            epsilon_hat: eps,
            likelihoods,
            ranking,
            flagged,
        })
    }

    pub fn n(&self) -> usize {
        self.likelihoods.len()
    }

    /// Rank of every pair (0 = least likely), indexed by pair.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = alloc::vec![0; self.ranking.len()];
        for (rank, &i) in self.ranking.iter().enumerate() {
            ranks[i] = rank;
        }
        ranks
    }

    pub fn is_flagged_mask(&self) -> Vec<bool> {
        let mut mask = alloc::vec![false; self.n()];
        for &i in &self.flagged {
            mask[i] = true;
        }
        mask
    }
}

/// Largest `f64` below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Scores every pair by `σ(g(s))`, estimates the contamination ratio and
/// flags the `⌊N·ε̂⌋` least likely pairs.
///
/// Likelihoods that round to 0 or 1 in `f64` are pulled to the nearest
/// interior value.
pub fn detect(model: &PolicyModel, data: &PreferenceDataset, gamma: f64) -> Result<ValuationReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let likelihoods = data
        .pairs()
        .iter()
        .map(|p| likelihood(model, data, p).map(|s| s.clamp(f64::MIN_POSITIVE, ONE_BELOW)))
        .collect::<Result<Vec<_>>>()?;
    ValuationReport::from_likelihoods(likelihoods, gamma)
}

/// The dataset without its flagged pairs, order preserved.
pub fn clean(data: &PreferenceDataset, report: &ValuationReport) -> Result<PreferenceDataset> {
    if report.n() != data.len() {
        return Err(Error::ReportMismatch {
            report: report.n(),
            data: data.len(),
        });
    }
    if let Some(&bad) = report.flagged.iter().find(|&&i| i >= data.len()) {
        return Err(Error::IndexOutOfRange {
            what: "flagged pair",
            index: bad,
            len: data.len(),
        });
    }
    let mask = report.is_flagged_mask();
    let kept = data
        .pairs()
        .iter()
        .zip(&mask)
        .filter(|(_, flagged)| !**flagged)
        .map(|(p, _)| *p)
        .collect::<Vec<_>>();
    data.with_pairs(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, PreferencePair};
    use alloc::vec;

    #[test]
    fn equal_likelihoods_give_one() {
        for s in [0.01, 0.3, 0.5, 0.97] {
            for n in [1, 2, 7, 50] {
                let xi = xi_hat(&vec![s; n], 2.0).unwrap();
                assert!((xi - 1.0).abs() <= 4.0 * f64::EPSILON, "{xi}");
            }
        }
    }

    #[test]
    fn single_pair() {
        assert_eq!(xi_hat(&[0.123], 1.5).unwrap(), 1.0);
    }

    #[test]
    fn separated_likelihoods_recover_clean_share() {
        let mut l = vec![0.9999; 6];
        l.extend([1e-6; 4]);
        let xi = xi_hat(&l, 2.0).unwrap();
        assert!((xi - 0.6).abs() < 1e-3, "{xi}");
        assert!((epsilon_hat(xi) - 0.4).abs() < 1e-3);
    }

    #[test]
    fn raw_estimate_exceeds_one() {
        let l = [0.2, 0.5, 0.9, 0.99];
        assert!(xi_hat_raw(&l, 2.0).unwrap() > 1.0);
        assert!(xi_hat(&l, 2.0).unwrap() <= 1.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(xi_hat(&[0.5, 1.0], 2.0), Err(Error::LikelihoodDomain { index: 1, .. })));
        assert!(matches!(xi_hat(&[0.0], 2.0), Err(Error::LikelihoodDomain { index: 0, .. })));
        assert!(xi_hat(&[], 2.0).is_err());
        assert!(xi_hat(&[0.5], 0.0).is_err());
    }

    #[test]
    fn epsilon_clamp() {
        assert_eq!(epsilon_hat(1.0), 0.0);
        assert!((epsilon_hat(0.6) - 0.4).abs() < 1e-15);
        assert_eq!(epsilon_hat(1.2), 0.0);
    }

    #[test]
    fn flagged_count_and_ties() {
        let report = ValuationReport::from_likelihoods(vec![0.5; 10], 2.0).unwrap();
        assert!(report.epsilon_hat < 1e-15);
        assert!(report.flagged.is_empty());
        assert_eq!(report.ranking, (0..10).collect::<Vec<_>>());

        // ε̂ = 0.3 − 0.3·b/a lands just under 0.3: two of the three flagged.
        let mut l = vec![0.99; 7];
        l.extend([1e-3, 2e-3, 1e-3]);
        let report = ValuationReport::from_likelihoods(l, 2.0).unwrap();
        assert_eq!(report.flagged.len(), crate::math::floor_count(10, report.epsilon_hat));
        assert_eq!(report.flagged, vec![7, 9]);
        assert_eq!(report.ranks()[7], 0);
        assert_eq!(report.ranks()[8], 2);
    }

    fn toy_data(n: usize) -> PreferenceDataset {
        let pairs = (0..n).map(|i| PreferencePair::new(i % 3, 0, 1)).collect();
        PreferenceDataset::new(3, 2, 0, vec![], pairs, DatasetMeta::default()).unwrap()
    }

    fn report_with_flags(n: usize, flagged: Vec<usize>) -> ValuationReport {
        ValuationReport {
            gamma: 2.0,
            xi_hat: 1.0,
            epsilon_hat: 0.0,
            likelihoods: vec![0.5; n],
            ranking: (0..n).collect(),
            flagged,
        }
    }

    #[test]
    fn cleaning_removes_flagged_in_order() {
        let data = toy_data(10);
        assert_eq!(clean(&data, &report_with_flags(10, vec![])).unwrap(), data);
        let cleaned = clean(&data, &report_with_flags(10, vec![7, 2])).unwrap();
        assert_eq!(cleaned.len(), 8);
        let expected: Vec<_> = data
            .pairs()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 2 && *i != 7)
            .map(|(_, p)| *p)
            .collect();
        assert_eq!(cleaned.pairs(), &expected[..]);
    }

    #[test]
    fn cleaning_guards() {
        let data = toy_data(4);
        assert_eq!(
            clean(&data, &report_with_flags(4, vec![0, 1, 2, 3])),
            Err(Error::EmptyDataset)
        );
        assert!(matches!(
            clean(&data, &report_with_flags(5, vec![])),
            Err(Error::ReportMismatch { .. })
        ));
        assert!(clean(&data, &report_with_flags(4, vec![9])).is_err());
    }
}
