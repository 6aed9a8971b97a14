//! Bias-corrected dissimilarity between the current noisy tree and the last
//! release.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{PrivateTree, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityRecord {
    pub t: u64,
    /// Unbiased estimate; may be negative.
    pub dis_hat: f64,
    pub dis_hat_clamped: f64,
    /// Budget spent on the noisy tree, `ε_{t,1}`.
    pub budget: f64,
}

impl DissimilarityRecord {
    pub fn new(t: u64, dis_hat: f64, budget: f64) -> Self {
        // `+ 0.0` folds a negative zero into positive zero.
        let dis_hat_clamped = if dis_hat > 0.0 { dis_hat } else { 0.0 } + 0.0;
        Self {
            t,
            dis_hat,
            dis_hat_clamped,
            budget,
        }
    }
}

fn check_domains(a: &PrivateTree, b: &PrivateTree) -> Result<()> {
    if a.domain() != b.domain() {
        return Err(Error::InvalidArgument(format!(
            "trees over different domains ({} vs {} values)",
            a.domain().size(),
            b.domain().size()
        )));
    }
    Ok(())
}

fn mean_squared_difference(a: &PrivateTree, b: &PrivateTree) -> f64 {
    let sum: f64 = a
        .properties()
        .iter()
        .zip(b.properties())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    sum / a.len() as f64
}

/// Mean squared node difference against the exact tree. Testing oracle only.
pub fn true_dissimilarity(current: &PrivateTree, previous_release: &PrivateTree) -> Result<f64> {
    check_domains(current, previous_release)?;
    Ok(mean_squared_difference(current, previous_release))
}

/// Mean squared difference over every node (root included) minus the mean of
/// the per-node estimation variances recorded on `noisy_current`.
pub fn estimate_dissimilarity(
    noisy_current: &PrivateTree,
    previous_release: &PrivateTree,
    epsilon_1: f64,
) -> Result<DissimilarityRecord> {
    check_domains(noisy_current, previous_release)?;
    if noisy_current
        .variances()
        .iter()
        .any(|v| !v.is_finite() || *v < 0.0)
    {
        return Err(Error::Contract(
            "noisy tree lacks usable variance metadata".into(),
        ));
    }
    let exact = noisy_current
        .provenance()
        .iter()
        .all(|&p| p == Provenance::Exact);
    let spent = noisy_current.budget_used();
    if !exact && (spent - epsilon_1).abs() > 1e-12 * epsilon_1.max(1.0) {
        return Err(Error::Contract(format!(
            "tree was estimated with budget {spent}, not the declared {epsilon_1}"
        )));
    }
    let mean_var = noisy_current.variances().iter().sum::<f64>() / noisy_current.len() as f64;
    let dis_hat = mean_squared_difference(noisy_current, previous_release) - mean_var;
    Ok(DissimilarityRecord::new(
        noisy_current.timestamp(),
        dis_hat,
        epsilon_1,
    ))
}
