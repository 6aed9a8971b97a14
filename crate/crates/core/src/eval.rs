//! Scoring a run's releases against the raw stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::StreamDataset;
use crate::error::{Error, Result};
use crate::metrics::{auc, mae, mre, roc_curve, Mre, RocPoint};
use crate::pipeline::RunOutput;
use crate::query::{
    counting_query, exact_monitor_statistic, monitor, range_query, raw_range_count, BaseQuery,
    MonitorOutcome, MonitorSpec,
};
use crate::seed::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorPlan {
    pub base: BaseQuery,
    pub delta: usize,
    /// Defaults to `w − 1` (at least 1).
    #[serde(default)]
    pub lag: Option<usize>,
    /// A timestamp is a true event when the exact statistic exceeds this
    /// count; defaults to the median exact statistic.
    #[serde(default)]
    pub label_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    /// Score only `t > w`.
    #[serde(default = "yes")]
    pub skip_warmup: bool,
    #[serde(default = "default_range_tasks")]
    pub range_tasks: usize,
    #[serde(default)]
    pub range_seed: u64,
    #[serde(default)]
    pub monitor: Option<MonitorPlan>,
}

fn yes() -> bool {
    true
}

fn default_range_tasks() -> usize {
    50
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            skip_warmup: true,
            range_tasks: default_range_tasks(),
            range_seed: 0,
            monitor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Per-value, per-timestamp counting error in frequency units.
    pub counting_mae: f64,
    pub counting_mre: Mre,
    /// Range error, normalised by the reports inside each task's span.
    pub range_mae: Option<f64>,
    pub range_mre: Option<Mre>,
    pub auc: Option<f64>,
    pub roc: Option<Vec<RocPoint>>,
    pub monitor_positives: usize,
    pub publication_fraction: f64,
}

fn first_scored(plan: &EvalPlan, w: usize, len: usize) -> u64 {
    if plan.skip_warmup && w < len {
        w as u64 + 1
    } else {
        1
    }
}

pub fn evaluate(
    dataset: &StreamDataset,
    output: &RunOutput,
    plan: &EvalPlan,
) -> Result<Evaluation> {
    let len = dataset.len();
    if len == 0 {
        return Err(Error::EmptyInput("dataset has no timestamps".into()));
    }
    if output.series.len() != len {
        return Err(Error::InvalidArgument(format!(
            "run has {} releases for {len} timestamps",
            output.series.len()
        )));
    }
    let w = output.config.w;
    let d = dataset.domain().size();
    let start = first_scored(plan, w, len);

    let mut est = Vec::new();
    let mut truth = Vec::new();
    for t in start..=len as u64 {
        let batch = dataset.batch(t).expect("t within dataset");
        let n = batch.n();
        if n == 0 {
            continue;
        }
        let counts = batch.true_counts(dataset.domain()).counts;
        for (v, &c) in counts.iter().enumerate().take(d) {
            est.push(counting_query(&output.series, v, 1, t)? / n as f64);
            truth.push(c / n as f64);
        }
    }
    if est.is_empty() {
        return Err(Error::EmptyInput(
            "no reports in the scored timestamps".into(),
        ));
    }
    let counting_mae = mae(&est, &truth)?;
    let counting_mre = mre(&est, &truth)?;

    let (range_mae, range_mre) = if plan.range_tasks > 0 {
        let mut rng = derive_rng(plan.range_seed, &[d as u64, len as u64, w as u64]);
        let mut est = Vec::with_capacity(plan.range_tasks);
        let mut truth = Vec::with_capacity(plan.range_tasks);
        let mut attempts = 0;
        while est.len() < plan.range_tasks && attempts < plan.range_tasks * 20 {
            attempts += 1;
            let a = rng.random_range(0..d);
            let b = rng.random_range(0..d);
            let (v1, v2) = (a.min(b), a.max(b));
            let delta = rng.random_range(1..=w.min(len));
            let lo = start.max(delta as u64);
            if lo > len as u64 {
                continue;
            }
            let t = rng.random_range(lo..=len as u64);
            let span_n: usize = (t + 1 - delta as u64..=t)
                .map(|s| dataset.batch(s).map_or(0, |b| b.n()))
                .sum();
            if span_n == 0 {
                continue;
            }
            est.push(range_query(&output.series, v1, v2, delta, t)? / span_n as f64);
            truth.push(raw_range_count(dataset, v1, v2, delta, t)? / span_n as f64);
        }
        if est.is_empty() {
            (None, None)
        } else {
            (Some(mae(&est, &truth)?), Some(mre(&est, &truth)?))
        }
    } else {
        (None, None)
    };

    let (roc, monitor_positives) = match &plan.monitor {
        Some(mp) => monitor_roc(dataset, output, mp, start)?,
        None => (None, 0),
    };

    Ok(Evaluation {
        counting_mae,
        counting_mre,
        range_mae,
        range_mre,
        auc: roc.as_deref().map(auc),
        roc,
        monitor_positives,
        publication_fraction: output.steady_publication_fraction(),
    })
}

/// Scores are the statistics from releases; labels come from raw data.
/// Returns no curve when only one class occurs.
fn monitor_roc(
    dataset: &StreamDataset,
    output: &RunOutput,
    plan: &MonitorPlan,
    start: u64,
) -> Result<(Option<Vec<RocPoint>>, usize)> {
    let w = output.config.w;
    let lag = plan.lag.unwrap_or(w.saturating_sub(1)).max(1);
    let spec = MonitorSpec::new(plan.base, plan.delta, lag, 0.0, w)?;
    let mut scores = Vec::new();
    let mut exact = Vec::new();
    for t in start..=dataset.len() as u64 {
        let x = match exact_monitor_statistic(dataset, &spec, t)? {
            Some(x) => x,
            None => continue,
        };
        if let MonitorOutcome::Ready { statistic, .. } = monitor(&output.series, &spec, t)? {
            scores.push(statistic);
            exact.push(x);
        }
    }
    if exact.is_empty() {
        return Ok((None, 0));
    }
    let threshold = plan.label_threshold.unwrap_or_else(|| median(&exact));
    let labels: Vec<bool> = exact.iter().map(|&x| x > threshold).collect();
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Ok((None, positives));
    }
    Ok((Some(roc_curve(&scores, &labels)?), positives))
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}
