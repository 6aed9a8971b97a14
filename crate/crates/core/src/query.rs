//! Counting, range and event-monitoring queries answered from releases only.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{StreamDataset, ValueDomain};
use crate::error::{Error, Result};
use crate::tree::{minimum_cover, node_id, tree_answer, PrivateTree};

#[derive(Debug, Clone)]
pub struct Release {
    pub t: u64,
    pub tree: Arc<PrivateTree>,
    /// Whether fresh budget was spent at `t` (false for republished trees).
    pub published: bool,
    pub group_lengths: Option<Vec<usize>>,
}

impl Release {
    pub fn n(&self) -> usize {
        self.tree.n_active()
    }
}

/// Contiguous run of releases.
#[derive(Debug, Clone)]
pub struct ReleaseSeries {
    domain: ValueDomain,
    releases: Vec<Release>,
    clamp_output: bool,
}

impl ReleaseSeries {
    pub fn new(domain: ValueDomain) -> Self {
        Self {
            domain,
            releases: Vec::new(),
            clamp_output: false,
        }
    }

    /// Clamp every answer at zero.
    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp_output = clamp;
        self
    }

    pub fn domain(&self) -> &ValueDomain {
        &self.domain
    }

    pub fn push(&mut self, release: Release) -> Result<()> {
        if release.tree.domain() != &self.domain {
            return Err(Error::InvalidArgument(
                "release domain differs from series".into(),
            ));
        }
        if let Some(last) = self.releases.last() {
            if release.t != last.t + 1 {
                return Err(Error::InvalidArgument(format!(
                    "release t={} does not follow t={}",
                    release.t, last.t
                )));
            }
        }
        self.releases.push(release);
        Ok(())
    }

    pub fn releases(&self) -> &[Release] {
        &self.releases
    }

    pub fn len(&self) -> usize {
        self.releases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    pub fn first_t(&self) -> Option<u64> {
        self.releases.first().map(|r| r.t)
    }

    pub fn get(&self, t: u64) -> Option<&Release> {
        let first = self.first_t()?;
        if t < first {
            return None;
        }
        self.releases.get((t - first) as usize)
    }

    fn span(&self, delta: usize, t: u64) -> Result<Vec<&Release>> {
        if delta == 0 {
            return Err(Error::InvalidArgument("query span must be positive".into()));
        }
        if delta as u64 > t {
            return Err(Error::InvalidArgument(format!(
                "span of {delta} timestamps ending at t={t} starts before t=1"
            )));
        }
        let mut found = Vec::with_capacity(delta);
        let mut missing = Vec::new();
        for s in t + 1 - delta as u64..=t {
            match self.get(s) {
                Some(r) => found.push(r),
                None => missing.push(s),
            }
        }
        if missing.is_empty() {
            Ok(found)
        } else {
            Err(Error::MissingReleases { missing })
        }
    }

    fn finish(&self, x: f64) -> f64 {
        if self.clamp_output {
            x.max(0.0)
        } else {
            x
        }
    }
}

/// `Σ_{t'=t−Δ+1}^{t} T^o_{t'}[leaf v] · n_{t'}`.
pub fn counting_query(series: &ReleaseSeries, v: usize, delta: usize, t: u64) -> Result<f64> {
    if v >= series.domain.size() {
        return Err(Error::InvalidArgument(format!("value {v} outside domain")));
    }
    let leaf = node_id(series.domain.height(), v);
    let total = series
        .span(delta, t)?
        .iter()
        .map(|r| r.tree.properties()[leaf] * r.n() as f64)
        .sum();
    Ok(series.finish(total))
}

pub fn range_query(
    series: &ReleaseSeries,
    v1: usize,
    v2: usize,
    delta: usize,
    t: u64,
) -> Result<f64> {
    let cover = minimum_cover(&series.domain, v1, v2)?;
    let total = series
        .span(delta, t)?
        .iter()
        .map(|r| tree_answer(&r.tree, &cover))
        .sum();
    Ok(series.finish(total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseQuery {
    Counting { v: usize },
    Range { v1: usize, v2: usize },
}

impl BaseQuery {
    fn answer(&self, series: &ReleaseSeries, delta: usize, t: u64) -> Result<f64> {
        match *self {
            BaseQuery::Counting { v } => counting_query(series, v, delta, t),
            BaseQuery::Range { v1, v2 } => range_query(series, v1, v2, delta, t),
        }
    }

    /// The same query evaluated on raw data.
    pub fn exact(&self, dataset: &StreamDataset, delta: usize, t: u64) -> Result<f64> {
        let (v1, v2) = match *self {
            BaseQuery::Counting { v } => (v, v),
            BaseQuery::Range { v1, v2 } => (v1, v2),
        };
        raw_range_count(dataset, v1, v2, delta, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    pub base: BaseQuery,
    pub delta: usize,
    pub lag: usize,
    pub threshold: f64,
}

impl MonitorSpec {
    pub fn new(
        base: BaseQuery,
        delta: usize,
        lag: usize,
        threshold: f64,
        w: usize,
    ) -> Result<Self> {
        if delta == 0 || delta > w || lag == 0 {
            return Err(Error::InvalidArgument(format!(
                "monitor needs 1 <= delta <= w and lag >= 1 (delta={delta}, w={w}, lag={lag})"
            )));
        }
        Ok(Self {
            base,
            delta,
            lag,
            threshold,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonitorOutcome {
    NotReady,
    Ready { signal: bool, statistic: f64 },
}

/// `x = Q(t) − Q(t − lag)`; signals when `x > θ`.
pub fn monitor(series: &ReleaseSeries, spec: &MonitorSpec, t: u64) -> Result<MonitorOutcome> {
    let earliest = series.first_t().unwrap_or(u64::MAX);
    let needed = t as i64 - spec.lag as i64 - spec.delta as i64 + 1;
    if needed < earliest as i64 {
        return Ok(MonitorOutcome::NotReady);
    }
    let now = spec.base.answer(series, spec.delta, t)?;
    let before = spec.base.answer(series, spec.delta, t - spec.lag as u64)?;
    let statistic = now - before;
    Ok(MonitorOutcome::Ready {
        signal: statistic > spec.threshold,
        statistic,
    })
}

/// Exact statistic of `spec` on raw data, or `None` before enough history.
pub fn exact_monitor_statistic(
    dataset: &StreamDataset,
    spec: &MonitorSpec,
    t: u64,
) -> Result<Option<f64>> {
    if (t as i64) - (spec.lag as i64) - (spec.delta as i64) + 1 < 1 {
        return Ok(None);
    }
    let now = spec.base.exact(dataset, spec.delta, t)?;
    let before = spec.base.exact(dataset, spec.delta, t - spec.lag as u64)?;
    Ok(Some(now - before))
}

/// Number of reports with value in `[v1, v2]` over `[t − Δ + 1, t]`.
pub fn raw_range_count(
    dataset: &StreamDataset,
    v1: usize,
    v2: usize,
    delta: usize,
    t: u64,
) -> Result<f64> {
    if v1 > v2 || v2 >= dataset.domain().size() {
        return Err(Error::InvalidArgument(format!(
            "range [{v1}, {v2}] invalid"
        )));
    }
    if delta == 0 || t == 0 || delta as u64 > t || t as usize > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "span ({delta}, {t}) outside the dataset"
        )));
    }
    let mut count = 0usize;
    for s in t + 1 - delta as u64..=t {
        let batch = dataset.batch(s).expect("span checked");
        count += batch
            .values()
            .filter(|&v| (v1..=v2).contains(&(v as usize)))
            .count();
    }
    Ok(count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    Counting,
    Range,
    Monitor,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    #[serde(default)]
    pub v: Option<usize>,
    #[serde(default)]
    pub v1: Option<usize>,
    #[serde(default)]
    pub v2: Option<usize>,
    #[serde(default = "one")]
    pub delta: usize,
    #[serde(default)]
    pub lag: Option<usize>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn one() -> usize {
    1
}

/// One entry of a query batch file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(rename = "type")]
    pub kind: QueryType,
    pub params: QueryParams,
    pub t: u64,
}

impl QueryItem {
    fn base(&self) -> Result<BaseQuery> {
        let p = &self.params;
        match (p.v, p.v1, p.v2) {
            (Some(v), None, None) => Ok(BaseQuery::Counting { v }),
            (None, Some(v1), Some(v2)) => Ok(BaseQuery::Range { v1, v2 }),
            _ => Err(Error::Config(format!(
                "query {:?} needs either v or v1 and v2",
                self.id
            ))),
        }
    }

    fn monitor_spec(&self) -> Result<MonitorSpec> {
        let lag = self
            .params
            .lag
            .ok_or_else(|| Error::Config("monitor query needs lag".into()))?;
        Ok(MonitorSpec {
            base: self.base()?,
            delta: self.params.delta,
            lag,
            threshold: self.params.threshold.unwrap_or(0.0),
        })
    }

    /// Estimate from releases: the count for counting/range queries and the
    /// monitor statistic `x` for monitors (`None` when not ready).
    pub fn answer(&self, series: &ReleaseSeries) -> Result<Option<f64>> {
        match self.kind {
            QueryType::Counting | QueryType::Range => Ok(Some(self.base()?.answer(
                series,
                self.params.delta,
                self.t,
            )?)),
            QueryType::Monitor => match monitor(series, &self.monitor_spec()?, self.t)? {
                MonitorOutcome::NotReady => Ok(None),
                MonitorOutcome::Ready { statistic, .. } => Ok(Some(statistic)),
            },
        }
    }

    pub fn ground_truth(&self, dataset: &StreamDataset) -> Result<Option<f64>> {
        match self.kind {
            QueryType::Counting | QueryType::Range => Ok(Some(self.base()?.exact(
                dataset,
                self.params.delta,
                self.t,
            )?)),
            QueryType::Monitor => exact_monitor_statistic(dataset, &self.monitor_spec()?, self.t),
        }
    }
}
