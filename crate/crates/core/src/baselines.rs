//! Comparison mechanisms releasing flat histograms: uniform budget (LBU),
//! sampling (LSP), budget distribution (LBD) and budget absorption (LBA).
//!
//! Each histogram is lifted to a tree by exact summation so the shared query
//! engine can answer ranges from it.

use std::sync::Arc;
use std::time::Instant;

use crate::budget::{Budget, BudgetLedger, Decision, LedgerEntry};
use crate::dissimilarity::DissimilarityRecord;
use crate::domain::{StreamBatch, StreamDataset, ValueDomain};
use crate::error::{Error, Result};
use crate::oracle::FrequencyOracle;
use crate::pipeline::{Method, RunConfig, RunOutput, RunTiming};
use crate::query::{Release, ReleaseSeries};
use crate::seed::{derive_rng, stage};
use crate::tree::PrivateTree;

const SUB_DISSIMILARITY: u64 = 1;
const SUB_PUBLICATION: u64 = 2;

fn method_label(m: Method) -> u64 {
    match m {
        Method::Mtsp => 0,
        Method::Lbu => 1,
        Method::Lsp => 2,
        Method::Lbd => 3,
        Method::Lba => 4,
    }
}

/// One oracle invocation over the raw domain, lifted to a tree.
fn histogram_release(
    batch: &StreamBatch,
    domain: &ValueDomain,
    epsilon: Budget,
    oracle: &dyn FrequencyOracle,
    seed: u64,
    path: &[u64],
) -> Result<PrivateTree> {
    let mut counts = vec![0u64; domain.size()];
    for v in batch.values() {
        counts[v as usize] += 1;
    }
    let n = batch.n() as u64;
    let eps = epsilon.as_epsilon();
    let mut rng = derive_rng(seed, path);
    let leaves = oracle.estimate(&counts, n, eps, &mut rng)?;
    let variance = oracle.variance(eps, n);
    PrivateTree::from_leaf_estimates(*domain, &leaves, variance, batch.t(), batch.n(), eps)
}

/// Histogram-level dissimilarity against the previous release, corrected by
/// the leaf variance.
fn histogram_dissimilarity(
    noisy: &PrivateTree,
    previous: &PrivateTree,
    d: usize,
    eps1: Budget,
) -> DissimilarityRecord {
    let (a, b) = (noisy.leaves(), previous.leaves());
    let msd = (0..d).map(|v| (a[v] - b[v]) * (a[v] - b[v])).sum::<f64>() / d as f64;
    let var = noisy.variances()[noisy.len() - noisy.domain().padded_size()];
    DissimilarityRecord::new(noisy.timestamp(), msd - var, eps1.as_epsilon())
}

struct Runner<'a> {
    dataset: &'a StreamDataset,
    config: &'a RunConfig,
    ledger: BudgetLedger,
    series: ReleaseSeries,
    oracle: Box<dyn FrequencyOracle>,
    prev: Arc<PrivateTree>,
    dissimilarities: Vec<DissimilarityRecord>,
    timing: RunTiming,
    started: Instant,
}

impl<'a> Runner<'a> {
    fn new(dataset: &'a StreamDataset, config: &'a RunConfig, method: Method) -> Result<Self> {
        config.validate()?;
        if config.method != method {
            return Err(Error::Config(format!(
                "{method} runner called for {}",
                config.method
            )));
        }
        let domain = *dataset.domain();
        Ok(Self {
            dataset,
            config,
            ledger: BudgetLedger::new(Budget::from_epsilon(config.epsilon)?, config.w)?,
            series: ReleaseSeries::new(domain).with_clamp(config.clamp_output),
            oracle: config.oracle.build(),
            prev: Arc::new(PrivateTree::zeros(domain, 0)),
            dissimilarities: Vec::new(),
            timing: RunTiming::default(),
            started: Instant::now(),
        })
    }

    fn path(&self, t: u64, sub: u64) -> [u64; 4] {
        [stage::BASELINE, method_label(self.config.method), t, sub]
    }

    fn publish(&self, batch: &StreamBatch, eps: Budget) -> Result<PrivateTree> {
        histogram_release(
            batch,
            self.dataset.domain(),
            eps,
            self.oracle.as_ref(),
            self.config.seed,
            &self.path(batch.t(), SUB_PUBLICATION),
        )
    }

    fn dissimilarity(&mut self, batch: &StreamBatch, eps1: Budget) -> Result<DissimilarityRecord> {
        let noisy = histogram_release(
            batch,
            self.dataset.domain(),
            eps1,
            self.oracle.as_ref(),
            self.config.seed,
            &self.path(batch.t(), SUB_DISSIMILARITY),
        )?;
        let rec = histogram_dissimilarity(&noisy, &self.prev, self.dataset.domain().size(), eps1);
        self.dissimilarities.push(rec);
        Ok(rec)
    }

    fn emit(
        &mut self,
        batch: &StreamBatch,
        fresh: Option<PrivateTree>,
        eps1: Budget,
        eps2: Budget,
        step: Instant,
    ) -> Result<()> {
        let t = batch.t();
        let published = fresh.is_some();
        let tree = Arc::new(fresh.unwrap_or_else(|| self.prev.copied(t, batch.n())));
        self.ledger.record(LedgerEntry {
            t,
            eps1,
            eps2,
            k_star: None,
            decision: if published {
                Decision::Publish
            } else {
                Decision::Approximate
            },
        })?;
        self.series.push(Release {
            t,
            tree: Arc::clone(&tree),
            published,
            group_lengths: None,
        })?;
        self.prev = tree;
        self.timing.per_timestamp.push(step.elapsed());
        Ok(())
    }

    fn finish(mut self) -> RunOutput {
        self.timing.total = self.started.elapsed();
        RunOutput {
            method: self.config.method,
            config: self.config.clone(),
            series: self.series,
            ledger: self.ledger,
            dissimilarities: self.dissimilarities,
            timing: self.timing,
        }
    }
}

/// `ε/w` at every timestamp.
pub fn run_lbu(dataset: &StreamDataset, config: &RunConfig) -> Result<RunOutput> {
    let mut r = Runner::new(dataset, config, Method::Lbu)?;
    let share = r.ledger.epsilon().div_floor(config.w as u64);
    for batch in dataset.batches() {
        let step = Instant::now();
        let tree = r.publish(batch, share)?;
        r.emit(batch, Some(tree), Budget::ZERO, share, step)?;
    }
    Ok(r.finish())
}

/// Full `ε` at the first timestamp of every stride of `w`; the rest copy it.
pub fn run_lsp(dataset: &StreamDataset, config: &RunConfig) -> Result<RunOutput> {
    let mut r = Runner::new(dataset, config, Method::Lsp)?;
    let full = r.ledger.epsilon();
    for batch in dataset.batches() {
        let step = Instant::now();
        if (batch.t() - 1) % config.w as u64 == 0 {
            let tree = r.publish(batch, full)?;
            r.emit(batch, Some(tree), Budget::ZERO, full, step)?;
        } else {
            r.emit(batch, None, Budget::ZERO, Budget::ZERO, step)?;
        }
    }
    Ok(r.finish())
}

fn scaled(b: Budget, factor: f64) -> Budget {
    Budget::from_nanos((b.nanos() as f64 * factor).floor() as u64).min(b)
}

/// Dissimilarity at `ε/(2w)`; offers a decayed share of the remaining
/// publication budget and publishes when the dissimilarity exceeds the
/// error of publishing with it.
pub fn run_lbd(dataset: &StreamDataset, config: &RunConfig) -> Result<RunOutput> {
    let mut r = Runner::new(dataset, config, Method::Lbd)?;
    let eps1 = r.ledger.eps1();
    for batch in dataset.batches() {
        let step = Instant::now();
        let rec = r.dissimilarity(batch, eps1)?;
        let candidate = scaled(r.ledger.remaining_publication(), config.lbd_decay);
        let worth_it = !candidate.is_zero()
            && rec.dis_hat > r.oracle.variance(candidate.as_epsilon(), batch.n() as u64);
        if worth_it {
            let tree = r.publish(batch, candidate)?;
            r.emit(batch, Some(tree), eps1, candidate, step)?;
        } else {
            r.emit(batch, None, eps1, Budget::ZERO, step)?;
        }
    }
    Ok(r.finish())
}

/// Dissimilarity at `ε/(2w)`; each timestamp owns a publication quantum of
/// `ε/(2w)`. A publication absorbs the quanta of the timestamps skipped since
/// the last nullified one and then nullifies as many following timestamps.
pub fn run_lba(dataset: &StreamDataset, config: &RunConfig) -> Result<RunOutput> {
    let mut r = Runner::new(dataset, config, Method::Lba)?;
    let eps1 = r.ledger.eps1();
    let quantum = eps1;
    let max_quanta = config.lba_max_quanta.unwrap_or(config.w).clamp(1, config.w) as u64;
    let mut nullified_until = 0u64;
    for batch in dataset.batches() {
        let step = Instant::now();
        let t = batch.t();
        let rec = r.dissimilarity(batch, eps1)?;
        if t <= nullified_until {
            r.emit(batch, None, eps1, Budget::ZERO, step)?;
            continue;
        }
        let quanta = (t - nullified_until).min(max_quanta);
        let available =
            Budget::from_nanos(quantum.nanos() * quanta).min(r.ledger.remaining_publication());
        let worth_it = !available.is_zero()
            && rec.dis_hat > r.oracle.variance(available.as_epsilon(), batch.n() as u64);
        if worth_it {
            let tree = r.publish(batch, available)?;
            r.emit(batch, Some(tree), eps1, available, step)?;
            nullified_until = t + quanta - 1;
        } else {
            r.emit(batch, None, eps1, Budget::ZERO, step)?;
        }
    }
    Ok(r.finish())
}
