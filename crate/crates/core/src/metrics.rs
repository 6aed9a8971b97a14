//! Accuracy and detection metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "{a} estimates for {b} truths"
        )));
    }
    if a == 0 {
        return Err(Error::EmptyInput("no estimate/truth pairs".into()));
    }
    Ok(())
}

pub fn mae(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pairs(estimates.len(), truths.len())?;
    let total: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).abs())
        .sum();
    Ok(total / estimates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mre {
    /// Mean over pairs with non-zero truth; `None` if every truth is zero.
    pub value: Option<f64>,
    pub evaluated: usize,
    pub zero_truth_excluded: usize,
}

pub fn mre(estimates: &[f64], truths: &[f64]) -> Result<Mre> {
    check_pairs(estimates.len(), truths.len())?;
    let mut sum = 0.0;
    let mut evaluated = 0;
    for (e, t) in estimates.iter().zip(truths) {
        if *t != 0.0 {
            sum += (e - t).abs() / t.abs();
            evaluated += 1;
        }
    }
    Ok(Mre {
        value: (evaluated > 0).then(|| sum / evaluated as f64),
        evaluated,
        zero_truth_excluded: estimates.len() - evaluated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Signal when the score is at least this value.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from sweeping the threshold over every distinct score, highest
/// first. Tied scores move together, giving a diagonal step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_pairs(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidArgument(format!(
            "ROC needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under an ROC curve ordered by increasing FPR.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mae,
    Mre,
    Roc,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricReport {
    pub mae: Option<f64>,
    pub mre: Option<Mre>,
    pub roc: Option<Vec<RocPoint>>,
    pub auc: Option<f64>,
}

/// For `Roc`, `ground_truths` are labels encoded as 0/1.
pub fn compute_metrics(
    estimates: &[f64],
    ground_truths: &[f64],
    kind: MetricKind,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    match kind {
        MetricKind::Mae => report.mae = Some(mae(estimates, ground_truths)?),
        MetricKind::Mre => report.mre = Some(mre(estimates, ground_truths)?),
        MetricKind::Roc => {
            let labels: Vec<bool> = ground_truths.iter().map(|&g| g > 0.5).collect();
            let curve = roc_curve(estimates, &labels)?;
            report.auc = Some(auc(&curve));
            report.roc = Some(curve);
        }
    }
    Ok(report)
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
