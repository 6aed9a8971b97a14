//! Seeded synthetic streams with known ground truth.
//!
//! Each timestamp draws `n` users i.i.d. from an underlying distribution.
//! The distribution can drift by a multiplicative log-normal random walk and
//! shift abruptly at declared change-points.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{StreamBatch, StreamDataset, ValueDomain};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, stage, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseDistribution {
    Uniform,
    /// Weight of rank `r` (1-based) proportional to `r^-exponent`.
    Zipf {
        exponent: f64,
    },
    Weights {
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeKind {
    /// Exchange the probability mass of two values.
    Swap { a: usize, b: usize },
    /// Multiply the mass of every value in `[lo, hi]` by `factor`, then
    /// renormalise.
    Scale { lo: usize, hi: usize, factor: f64 },
    /// Cyclically shift the distribution by `by` positions.
    Rotate { by: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub t: u64,
    #[serde(flatten)]
    pub change: ChangeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub timestamps: usize,
    pub users_per_timestamp: usize,
    pub base: BaseDistribution,
    /// Standard deviation of the per-step log-normal multiplicative drift;
    /// 0 keeps the distribution fixed between change-points.
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub change_points: Vec<ChangePoint>,
    /// Randomly permute which value gets which base rank.
    #[serde(default)]
    pub permute_ranks: bool,
    pub seed: u64,
}

/// A generated stream plus the distribution each timestamp was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub dataset: StreamDataset,
    pub distributions: Vec<Vec<f64>>,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.timestamps == 0 {
            return Err(Error::Config(
                "synthetic stream needs d >= 1 and T >= 1".into(),
            ));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::Config(format!(
                "drift {} must be finite and >= 0",
                self.drift
            )));
        }
        for cp in &self.change_points {
            if cp.t == 0 || cp.t as usize > self.timestamps {
                return Err(Error::Config(format!(
                    "change-point at t={} outside stream of length {}",
                    cp.t, self.timestamps
                )));
            }
            let in_domain = |v: usize| v < self.d;
            let ok = match &cp.change {
                ChangeKind::Swap { a, b } => in_domain(*a) && in_domain(*b),
                ChangeKind::Scale { lo, hi, factor } => {
                    lo <= hi && in_domain(*hi) && *factor > 0.0 && factor.is_finite()
                }
                ChangeKind::Rotate { .. } => true,
            };
            if !ok {
                return Err(Error::Config(format!("invalid change-point {cp:?}")));
            }
        }
        Ok(())
    }

    fn base_weights(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut w = match &self.base {
            BaseDistribution::Uniform => vec![1.0; self.d],
            BaseDistribution::Zipf { exponent } => {
                (1..=self.d).map(|r| (r as f64).powf(-exponent)).collect()
            }
            BaseDistribution::Weights { weights } => {
                if weights.len() != self.d || weights.iter().any(|&x| !(x >= 0.0)) {
                    return Err(Error::Config(format!(
                        "explicit weights must be {} non-negative numbers",
                        self.d
                    )));
                }
                weights.clone()
            }
        };
        if self.permute_ranks {
            w.shuffle(rng);
        }
        normalize(&mut w)?;
        Ok(w)
    }
}

fn normalize(w: &mut [f64]) -> Result<()> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Config("distribution has no mass".into()));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(())
}

fn apply_change(p: &mut [f64], change: &ChangeKind) -> Result<()> {
    match change {
        ChangeKind::Swap { a, b } => p.swap(*a, *b),
        ChangeKind::Scale { lo, hi, factor } => p[*lo..=*hi].iter_mut().for_each(|x| *x *= factor),
        ChangeKind::Rotate { by } => {
            let len = p.len();
            p.rotate_right(by % len);
        }
    }
    normalize(p)
}

/// Multinomial draw via a chain of conditional binomials.
fn multinomial<R: Rng>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    let mut left = n;
    let mut mass_left = 1.0;
    for (j, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == probs.len() || mass_left <= p {
            counts[j] = left;
            break;
        }
        let cond = (p / mass_left).clamp(0.0, 1.0);
        let k = Binomial::new(left, cond)
            .expect("valid binomial")
            .sample(rng);
        counts[j] = k;
        left -= k;
        mass_left -= p;
    }
    counts
}

pub fn synthesize_stream(spec: &SyntheticSpec) -> Result<SyntheticStream> {
    spec.validate()?;
    let domain = ValueDomain::new(spec.d)?;
    let mut setup_rng = derive_rng(spec.seed, &[stage::DATASET, 0]);
    let mut probs = spec.base_weights(&mut setup_rng)?;

    let mut batches = Vec::with_capacity(spec.timestamps);
    let mut distributions = Vec::with_capacity(spec.timestamps);
    for t in 1..=spec.timestamps as u64 {
        let mut rng = derive_rng(spec.seed, &[stage::DATASET, t]);
        if spec.drift > 0.0 && t > 1 {
            for x in probs.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x *= (spec.drift * z).exp();
            }
            normalize(&mut probs)?;
        }
        for cp in spec.change_points.iter().filter(|cp| cp.t == t) {
            apply_change(&mut probs, &cp.change)?;
        }
        let counts = multinomial(spec.users_per_timestamp as u64, &probs, &mut rng);
        let mut values: Vec<u32> = counts
            .iter()
            .enumerate()
            .flat_map(|(v, &c)| std::iter::repeat_n(v as u32, c as usize))
            .collect();
        values.shuffle(&mut rng);
        batches.push(StreamBatch::from_values(t, &values, &domain)?);
        distributions.push(probs.clone());
    }
    Ok(SyntheticStream {
        dataset: StreamDataset::new(domain, batches)?,
        distributions,
    })
}
