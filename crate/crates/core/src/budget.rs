//! Exact privacy-budget accounting over sliding windows.
//!
//! Budgets are integer multiples of 1e-9 ε so every window sum is exact.
//! All conversions from reals round down, which can only under-spend.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NANOS_PER_EPSILON: u64 = 1_000_000_000;

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Budget(u64);

impl Budget {
    pub const ZERO: Budget = Budget(0);

    pub fn from_nanos(nanos: u64) -> Self {
        Self(nanos)
    }

    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() || epsilon > 1e9 {
            return Err(Error::InvalidArgument(format!(
                "epsilon {epsilon} must be in (0, 1e9]"
            )));
        }
        Ok(Self((epsilon * NANOS_PER_EPSILON as f64).floor() as u64))
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_epsilon(self) -> f64 {
        self.0 as f64 / NANOS_PER_EPSILON as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn div_floor(self, k: u64) -> Self {
        Self(self.0 / k)
    }

    pub fn saturating_sub(self, other: Self) -> Self {
        Self(self.0.saturating_sub(other.0))
    }
}

impl Add for Budget {
    type Output = Budget;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Sub for Budget {
    type Output = Budget;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Sum for Budget {
    fn sum<I: Iterator<Item = Budget>>(iter: I) -> Self {
        Self(iter.map(|b| b.0).sum())
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}e-9", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Warmup,
    Publish,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub t: u64,
    pub eps1: Budget,
    pub eps2: Budget,
    pub k_star: Option<usize>,
    pub decision: Decision,
}

impl LedgerEntry {
    pub fn spend(&self) -> Budget {
        self.eps1 + self.eps2
    }
}

/// Per-timestamp spend record. `record` rejects any entry that would push
/// some length-`w` window above ε.
#[derive(Debug, Clone)]
pub struct BudgetLedger {
    epsilon: Budget,
    w: usize,
    entries: Vec<LedgerEntry>,
    window_total: u64,
    /// Publication spend over the last `w − 1` entries.
    recent_eps2: u64,
}

impl BudgetLedger {
    pub fn new(epsilon: Budget, w: usize) -> Result<Self> {
        if w == 0 || epsilon.is_zero() {
            return Err(Error::InvalidArgument(
                "ledger needs w >= 1 and epsilon > 0".into(),
            ));
        }
        Ok(Self {
            epsilon,
            w,
            entries: Vec::new(),
            window_total: 0,
            recent_eps2: 0,
        })
    }

    pub fn epsilon(&self) -> Budget {
        self.epsilon
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn next_t(&self) -> u64 {
        self.entries.len() as u64 + 1
    }

    /// `ε/(2w)`: the dissimilarity budget and each half of a warmup spend.
    pub fn eps1(&self) -> Budget {
        self.epsilon.div_floor(2 * self.w as u64)
    }

    pub fn publication_cap(&self) -> Budget {
        self.epsilon.div_floor(2)
    }

    /// `ε/2` minus publication spend in the previous `w − 1` timestamps.
    pub fn remaining_publication(&self) -> Budget {
        self.publication_cap()
            .saturating_sub(Budget(self.recent_eps2))
    }

    /// Total spend of the window ending at the last recorded timestamp.
    pub fn window_spend(&self) -> Budget {
        Budget(self.window_total)
    }

    pub fn record(&mut self, entry: LedgerEntry) -> Result<()> {
        let t = self.next_t();
        if entry.t != t {
            return Err(Error::InvalidArgument(format!(
                "ledger expects t={t}, got t={}",
                entry.t
            )));
        }
        let len = self.entries.len();
        let leaving = if len >= self.w {
            self.entries[len - self.w].spend().0
        } else {
            0
        };
        let total = self.window_total - leaving + entry.spend().0;
        if total > self.epsilon.0 {
            return Err(Error::LedgerViolation {
                t,
                window_start: t.saturating_sub(self.w as u64 - 1).max(1),
                spent: total,
                cap: self.epsilon.0,
            });
        }
        self.window_total = total;
        if self.w > 1 {
            let tail = self.w - 1;
            let leaving2 = if len >= tail {
                self.entries[len - tail].eps2.0
            } else {
                0
            };
            self.recent_eps2 = self.recent_eps2 - leaving2 + entry.eps2.0;
        }
        self.entries.push(entry);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowViolation {
    pub start: u64,
    pub end: u64,
    pub spent: Budget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub windows_checked: usize,
    pub max_window_spend: Budget,
    pub cap: Budget,
    pub violations: Vec<WindowViolation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Recomputes every window sum from prefix sums, independently of the
/// ledger's running totals. Windows are `[max(1, t − w + 1), t]` for every
/// recorded `t`.
pub fn audit(entries: &[LedgerEntry], epsilon: Budget, w: usize) -> Result<AuditReport> {
    if w == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let mut prefix = Vec::with_capacity(entries.len() + 1);
    prefix.push(0u128);
    for (i, e) in entries.iter().enumerate() {
        if e.t != i as u64 + 1 {
            return Err(Error::InvalidArgument(format!(
                "ledger entry {i} has t={}; timestamps must be contiguous from 1",
                e.t
            )));
        }
        prefix.push(prefix[i] + e.eps1.0 as u128 + e.eps2.0 as u128);
    }
    let mut report = AuditReport {
        windows_checked: 0,
        max_window_spend: Budget::ZERO,
        cap: epsilon,
        violations: Vec::new(),
    };
    for end in 1..=entries.len() {
        let start = end.saturating_sub(w) + 1;
        let spent = (prefix[end] - prefix[start - 1]) as u64;
        report.windows_checked += 1;
        report.max_window_spend = report.max_window_spend.max(Budget(spent));
        if spent > epsilon.0 {
            report.violations.push(WindowViolation {
                start: start as u64,
                end: end as u64,
                spent: Budget(spent),
            });
        }
    }
    Ok(report)
}
