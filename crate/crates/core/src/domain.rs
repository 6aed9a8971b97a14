//! Value domain and stream data model.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite value domain padded to a power of two so the private tree is
/// always perfect. Indices `d..padded_size` are padding and never hold data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueDomain {
    d: usize,
    padded_size: usize,
    height: usize,
}

impl ValueDomain {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "domain size must be positive".into(),
            ));
        }
        let padded_size = d.next_power_of_two();
        Ok(Self {
            d,
            padded_size,
            height: padded_size.trailing_zeros() as usize,
        })
    }

    /// Raw domain size `d`.
    pub fn size(&self) -> usize {
        self.d
    }

    pub fn padded_size(&self) -> usize {
        self.padded_size
    }

    /// Tree height `h` (a single-value domain has height 0).
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of tree levels including the root.
    pub fn levels(&self) -> usize {
        self.height + 1
    }

    pub fn node_count(&self) -> usize {
        2 * self.padded_size - 1
    }

    pub fn contains(&self, value: usize) -> bool {
        value < self.d
    }
}

/// One user's report at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub user: u32,
    pub value: u32,
}

/// Every active user's report at timestamp `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamBatch {
    t: u64,
    reports: Vec<Report>,
}

impl StreamBatch {
    /// Validates that each user reports at most once and that every value
    /// lies inside the raw domain.
    pub fn new(t: u64, reports: Vec<Report>, domain: &ValueDomain) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidArgument("timestamps are 1-based".into()));
        }
        let mut seen = HashSet::with_capacity(reports.len());
        for r in &reports {
            if !domain.contains(r.value as usize) {
                return Err(Error::InvalidArgument(format!(
                    "value index {} outside domain of size {} at t={t}",
                    r.value,
                    domain.size()
                )));
            }
            if !seen.insert(r.user) {
                return Err(Error::InvalidArgument(format!(
                    "user {} reports twice at t={t}",
                    r.user
                )));
            }
        }
        Ok(Self { t, reports })
    }

    /// Batch whose users are `0..values.len()` in order.
    pub fn from_values(t: u64, values: &[u32], domain: &ValueDomain) -> Result<Self> {
        let reports = values
            .iter()
            .enumerate()
            .map(|(i, &value)| Report {
                user: i as u32,
                value,
            })
            .collect();
        Self::new(t, reports, domain)
    }

    pub fn empty(t: u64) -> Self {
        Self {
            t,
            reports: Vec::new(),
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    /// Number of active users `n_t`.
    pub fn n(&self) -> usize {
        self.reports.len()
    }

    pub fn values(&self) -> impl Iterator<Item = u32> + '_ {
        self.reports.iter().map(|r| r.value)
    }

    pub fn true_counts(&self, domain: &ValueDomain) -> Histogram {
        let mut counts = vec![0.0; domain.padded_size()];
        for v in self.values() {
            counts[v as usize] += 1.0;
        }
        Histogram {
            counts,
            basis: HistogramBasis::TrueCounts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramBasis {
    TrueCounts,
    EstimatedFrequencies,
}

/// Per-value vector of length `padded_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<f64>,
    pub basis: HistogramBasis,
}

impl Histogram {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// A materialised stream `(D_1, D_2, ...)` over a fixed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDataset {
    domain: ValueDomain,
    batches: Vec<StreamBatch>,
    /// Raw labels for value indices, when the data came from a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value_labels: Option<Vec<String>>,
}

impl StreamDataset {
    pub fn new(domain: ValueDomain, batches: Vec<StreamBatch>) -> Result<Self> {
        for (i, b) in batches.iter().enumerate() {
            if b.t() != i as u64 + 1 {
                return Err(Error::InvalidArgument(format!(
                    "batch {i} has timestamp {}; timestamps must be contiguous from 1",
                    b.t()
                )));
            }
        }
        Ok(Self {
            domain,
            batches,
            value_labels: None,
        })
    }

    pub fn with_value_labels(mut self, labels: Vec<String>) -> Self {
        self.value_labels = Some(labels);
        self
    }

    pub fn domain(&self) -> &ValueDomain {
        &self.domain
    }

    pub fn batches(&self) -> &[StreamBatch] {
        &self.batches
    }

    pub fn batch(&self, t: u64) -> Option<&StreamBatch> {
        if t == 0 {
            return None;
        }
        self.batches.get(t as usize - 1)
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn value_labels(&self) -> Option<&[String]> {
        self.value_labels.as_deref()
    }

    pub fn total_reports(&self) -> usize {
        self.batches.iter().map(StreamBatch::n).sum()
    }

    /// Ground-truth count histograms, one per timestamp.
    pub fn true_histograms(&self) -> Vec<Histogram> {
        self.batches
            .iter()
            .map(|b| b.true_counts(&self.domain))
            .collect()
    }
}
