//! Optimal budget allocation over the dissimilarity window.
//!
//! `E(k) = P(k) + Σ_{i>k} dis_(i)` with `P(k) = k · var(ε/(2k))`. Since
//! `P(k)` is the perspective of a convex function it is convex in `k`, and the
//! sorted dissimilarities are non-increasing, so `E(k+1) − E(k)` is
//! non-decreasing and the first ascent is the global minimum.

use std::cmp::Reverse;
use std::collections::{BTreeSet, VecDeque};

use crate::budget::{Budget, BudgetLedger, Decision, LedgerEntry};
use crate::dissimilarity::DissimilarityRecord;
use crate::error::{Error, Result};
use crate::oracle::oue_unit_variance;

type SortKey = (Reverse<u64>, u64);

fn sort_key(r: &DissimilarityRecord) -> SortKey {
    (Reverse(r.dis_hat_clamped.to_bits()), r.t)
}

/// The most recent dissimilarity records (at most `w`, spanning at most `w`
/// timestamps) plus an incrementally maintained descending view.
#[derive(Debug, Clone)]
pub struct DissimilarityWindow {
    w: usize,
    records: VecDeque<DissimilarityRecord>,
    sorted: BTreeSet<SortKey>,
}

impl DissimilarityWindow {
    pub fn new(w: usize) -> Self {
        Self {
            w,
            records: VecDeque::with_capacity(w + 1),
            sorted: BTreeSet::new(),
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &DissimilarityRecord> {
        self.records.iter()
    }

    pub fn latest_t(&self) -> Option<u64> {
        self.records.back().map(|r| r.t)
    }

    /// Appends a record and evicts anything older than `t − w + 1`.
    pub fn push(&mut self, record: DissimilarityRecord) -> Result<()> {
        if !(record.dis_hat_clamped >= 0.0) {
            return Err(Error::InvalidArgument(
                "clamped dissimilarity must be >= 0".into(),
            ));
        }
        if self.latest_t().is_some_and(|last| record.t <= last) {
            return Err(Error::InvalidArgument(format!(
                "dissimilarity at t={} is not newer than the window",
                record.t
            )));
        }
        while let Some(front) = self.records.front() {
            if front.t + self.w as u64 <= record.t {
                let old = self.records.pop_front().expect("front exists");
                self.sorted.remove(&sort_key(&old));
            } else {
                break;
            }
        }
        self.sorted.insert(sort_key(&record));
        self.records.push_back(record);
        Ok(())
    }

    /// `(t, dis_hat_clamped)` by descending dissimilarity, earlier `t` first
    /// on ties.
    pub fn sorted_view(&self) -> Vec<(u64, f64)> {
        self.sorted
            .iter()
            .map(|&(Reverse(bits), t)| (t, f64::from_bits(bits)))
            .collect()
    }
}

/// `P(k)`: total estimation variance when `k` timestamps split `ε/2`.
pub fn publication_error(k: usize, epsilon: f64, n_group: u64) -> f64 {
    publication_error_with(k, epsilon, n_group, &oue_unit_variance)
}

/// `P(k)` for an oracle whose per-user variance at budget `ε` is `unit(ε)`.
pub fn publication_error_with(
    k: usize,
    epsilon: f64,
    n_group: u64,
    unit: &dyn Fn(f64) -> f64,
) -> f64 {
    if k == 0 {
        return 0.0;
    }
    (k as f64 * unit(epsilon / (2.0 * k as f64))) / n_group as f64
}

pub fn cumulative_error(sorted_dis: &[f64], k: usize, epsilon: f64, n_group: u64) -> Result<f64> {
    cumulative_error_with(sorted_dis, k, epsilon, n_group, &oue_unit_variance)
}

pub fn cumulative_error_with(
    sorted_dis: &[f64],
    k: usize,
    epsilon: f64,
    n_group: u64,
    unit: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    if k > sorted_dis.len() {
        return Err(Error::InvalidArgument(format!(
            "k={k} outside 0..={}",
            sorted_dis.len()
        )));
    }
    if n_group == 0 {
        return Err(Error::InvalidArgument("n_group must be positive".into()));
    }
    let tail: f64 = sorted_dis[k..].iter().sum();
    Ok(publication_error_with(k, epsilon, n_group, unit) + tail)
}

/// `k · unit_var(ε/(2k))` for `k = 0..=w`; divide by the group size to get
/// `P(k)`.
#[derive(Debug, Clone)]
pub struct PublicationTable {
    epsilon: f64,
    unit: Vec<f64>,
}

impl PublicationTable {
    pub fn new(epsilon: f64, w: usize) -> Self {
        Self::with_unit_variance(epsilon, w, &oue_unit_variance)
    }

    pub fn with_unit_variance(epsilon: f64, w: usize, unit: &dyn Fn(f64) -> f64) -> Self {
        let unit = (0..=w)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    k as f64 * unit(epsilon / (2.0 * k as f64))
                }
            })
            .collect();
        Self { epsilon, unit }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn p(&self, k: usize, n_group: u64) -> f64 {
        self.unit[k] / n_group as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub k_star: usize,
    pub eps2: Budget,
    pub publish: bool,
}

fn check_inputs(
    window: &DissimilarityWindow,
    ledger: &BudgetLedger,
    t: u64,
    n_group: u64,
) -> Result<()> {
    if window.latest_t() != Some(t) {
        return Err(Error::InvalidArgument(format!(
            "window ends at {:?}, allocation requested for t={t}",
            window.latest_t()
        )));
    }
    if ledger.next_t() != t {
        return Err(Error::InvalidArgument(format!(
            "ledger is at t={}, allocation requested for t={t}",
            ledger.next_t()
        )));
    }
    if n_group == 0 {
        return Err(Error::InvalidArgument("n_group must be positive".into()));
    }
    Ok(())
}

fn settle(ledger: &mut BudgetLedger, t: u64, k_star: usize, selected: bool) -> Result<Allocation> {
    let rm = ledger.remaining_publication();
    let eps2 = if selected && k_star > 0 {
        rm.min(ledger.publication_cap().div_floor(k_star as u64))
    } else {
        Budget::ZERO
    };
    let publish = !eps2.is_zero();
    let cap = ledger.publication_cap();
    if ledger.publication_cap().saturating_sub(rm) + eps2 > cap {
        return Err(Error::LedgerViolation {
            t,
            window_start: t.saturating_sub(ledger.w() as u64 - 1).max(1),
            spent: (cap.saturating_sub(rm) + eps2).nanos(),
            cap: cap.nanos(),
        });
    }
    ledger.record(LedgerEntry {
        t,
        eps1: ledger.eps1(),
        eps2,
        k_star: Some(k_star),
        decision: if publish {
            Decision::Publish
        } else {
            Decision::Approximate
        },
    })?;
    Ok(Allocation {
        k_star,
        eps2,
        publish,
    })
}

/// Reference allocator: full re-sort and evaluation of every `E(k)`.
pub fn oba_allocate(
    window: &DissimilarityWindow,
    ledger: &mut BudgetLedger,
    t: u64,
    n_group: u64,
) -> Result<Allocation> {
    oba_allocate_with(window, ledger, t, n_group, &oue_unit_variance)
}

pub fn oba_allocate_with(
    window: &DissimilarityWindow,
    ledger: &mut BudgetLedger,
    t: u64,
    n_group: u64,
    unit: &dyn Fn(f64) -> f64,
) -> Result<Allocation> {
    check_inputs(window, ledger, t, n_group)?;
    let mut entries: Vec<(u64, f64)> = window.records().map(|r| (r.t, r.dis_hat_clamped)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let dis: Vec<f64> = entries.iter().map(|e| e.1).collect();
    let epsilon = ledger.epsilon().as_epsilon();

    let mut k_star = 0;
    let mut best = cumulative_error_with(&dis, 0, epsilon, n_group, unit)?;
    for k in 1..=dis.len() {
        let e = cumulative_error_with(&dis, k, epsilon, n_group, unit)?;
        if e < best {
            best = e;
            k_star = k;
        }
    }
    let selected = entries[..k_star].iter().any(|&(rt, _)| rt == t);
    settle(ledger, t, k_star, selected)
}

/// Incremental allocator: walks the maintained sorted view and stops at the
/// first `k` where `E(k+1) ≥ E(k)`. Costs `O(log w + k_stop)`.
pub fn oba_allocate_fast(
    window: &DissimilarityWindow,
    ledger: &mut BudgetLedger,
    t: u64,
    n_group: u64,
    table: &PublicationTable,
) -> Result<Allocation> {
    check_inputs(window, ledger, t, n_group)?;
    if table.unit.len() <= window.len() {
        return Err(Error::InvalidArgument(
            "publication table shorter than window".into(),
        ));
    }
    let mut k = 0;
    let mut selected = false;
    for &(Reverse(bits), rt) in &window.sorted {
        let dis = f64::from_bits(bits);
        if table.p(k + 1, n_group) - table.p(k, n_group) >= dis {
            break;
        }
        k += 1;
        selected |= rt == t;
    }
    settle(ledger, t, k, selected)
}
