//! CSV ingestion into a [`StreamDataset`].
//!
//! Rows are `(timestamp, user, value)` triples. Raw values are
//! dictionary-encoded in first-occurrence order, users are interned, and
//! every timestamp in `[min, max]` becomes a batch (gaps become empty
//! batches). A user reporting several times at one timestamp keeps the last
//! row, matching "last viewed item of each user per day" preparation.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{Report, StreamBatch, StreamDataset, ValueDomain};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub ts_col: String,
    pub user_col: String,
    pub value_col: String,
    /// Drop rows whose numeric value lies above this quantile (e.g. 0.999)
    /// before encoding.
    #[serde(default)]
    pub trim_quantile: Option<f64>,
    /// Desk-scale cap on reports per timestamp; `None` keeps everything.
    #[serde(default)]
    pub max_reports_per_timestamp: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            ts_col: "timestamp".into(),
            user_col: "user".into(),
            value_col: "value".into(),
            trim_quantile: None,
            max_reports_per_timestamp: None,
            subsample_seed: 0,
        }
    }
}

struct RawRow {
    line: usize,
    ts: i64,
    user: String,
    value: String,
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<StreamDataset> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(file, schema)
}

pub fn ingest_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<StreamDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "column '{name}' not found; available: {:?}",
                    headers.iter().collect::<Vec<_>>()
                ))
            })
    };
    let (ts_i, user_i, value_i) = (
        column(&schema.ts_col)?,
        column(&schema.user_col)?,
        column(&schema.value_col)?,
    );

    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row: line,
            reason: e.to_string(),
        })?;
        let field = |i: usize, what: &str| {
            rec.get(i)
                .map(str::trim)
                .ok_or_else(|| Error::MalformedRow {
                    row: line,
                    reason: format!("missing {what}"),
                })
        };
        let ts_raw = field(ts_i, "timestamp")?;
        let ts = ts_raw.parse::<i64>().map_err(|_| Error::MalformedRow {
            row: line,
            reason: format!("timestamp '{ts_raw}' is not an integer"),
        })?;
        let user = field(user_i, "user")?;
        let value = field(value_i, "value")?;
        if user.is_empty() || value.is_empty() {
            return Err(Error::MalformedRow {
                row: line,
                reason: "empty user or value".into(),
            });
        }
        rows.push(RawRow {
            line,
            ts,
            user: user.to_owned(),
            value: value.to_owned(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("csv file has no data rows".into()));
    }

    if let Some(q) = schema.trim_quantile {
        rows = trim_above_quantile(rows, q)?;
    }

    let mut value_index: HashMap<String, u32> = HashMap::new();
    let mut labels = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let (mut t_min, mut t_max) = (i64::MAX, i64::MIN);
    let mut encoded = Vec::with_capacity(rows.len());
    for row in rows {
        let next = value_index.len() as u32;
        let value = *value_index.entry(row.value.clone()).or_insert_with(|| {
            labels.push(row.value);
            next
        });
        let next = user_index.len() as u32;
        let user = *user_index.entry(row.user).or_insert(next);
        t_min = t_min.min(row.ts);
        t_max = t_max.max(row.ts);
        encoded.push((row.ts, Report { user, value }));
    }

    let domain = ValueDomain::new(labels.len())?;
    let span = (t_max - t_min) as usize + 1;
    // Last report per user wins within a timestamp.
    let mut per_ts: Vec<HashMap<u32, u32>> = vec![HashMap::new(); span];
    let mut order: Vec<Vec<u32>> = vec![Vec::new(); span];
    for (ts, r) in encoded {
        let slot = (ts - t_min) as usize;
        if per_ts[slot].insert(r.user, r.value).is_none() {
            order[slot].push(r.user);
        }
    }

    let mut batches = Vec::with_capacity(span);
    for (slot, users) in order.into_iter().enumerate() {
        let t = slot as u64 + 1;
        let mut reports: Vec<Report> = users
            .into_iter()
            .map(|user| Report {
                user,
                value: per_ts[slot][&user],
            })
            .collect();
        if let Some(cap) = schema.max_reports_per_timestamp {
            if reports.len() > cap {
                let mut rng = derive_rng(schema.subsample_seed, &[stage::SUBSAMPLE, t]);
                reports.shuffle(&mut rng);
                reports.truncate(cap);
            }
        }
        batches.push(StreamBatch::new(t, reports, &domain)?);
    }
    Ok(StreamDataset::new(domain, batches)?.with_value_labels(labels))
}

fn trim_above_quantile(rows: Vec<RawRow>, q: f64) -> Result<Vec<RawRow>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("trim quantile {q} outside [0, 1]")));
    }
    let mut numeric = Vec::with_capacity(rows.len());
    for row in &rows {
        let x = row.value.parse::<f64>().map_err(|_| Error::MalformedRow {
            row: row.line,
            reason: format!(
                "value '{}' is not numeric but trimming was requested",
                row.value
            ),
        })?;
        numeric.push(x);
    }
    let mut sorted = numeric.clone();
    sorted.sort_by(f64::total_cmp);
    // Nearest-rank quantile.
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let cutoff = sorted[rank - 1];
    Ok(rows
        .into_iter()
        .zip(numeric)
        .filter(|(_, x)| *x <= cutoff)
        .map(|(r, _)| r)
        .collect())
}
