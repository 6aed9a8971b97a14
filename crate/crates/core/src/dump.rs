//! JSON-lines persistence for releases and budget ledgers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::budget::{Budget, BudgetLedger, Decision, LedgerEntry};
use crate::error::{Error, Result};
use crate::pipeline::{Method, RunOutput};
use crate::query::{Release, ReleaseSeries};
use crate::tree::{PrivateTree, TreeDump};

pub const RELEASES_FILE: &str = "releases.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const LEDGER_META_FILE: &str = "ledger_meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseLine {
    pub t: u64,
    pub n: usize,
    pub published: bool,
    #[serde(default)]
    pub group_lengths: Option<Vec<usize>>,
    pub tree: TreeDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub t: u64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps1_nanos: u64,
    pub eps2_nanos: u64,
    pub k_star: Option<usize>,
    pub decision: Decision,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerMeta {
    pub method: Method,
    pub epsilon: f64,
    pub w: usize,
    pub epsilon_nanos: u64,
}

pub fn write_releases(dir: &Path, series: &ReleaseSeries) -> Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(RELEASES_FILE))?);
    for r in series.releases() {
        let line = ReleaseLine {
            t: r.t,
            n: r.n(),
            published: r.published,
            group_lengths: r.group_lengths.clone(),
            tree: r.tree.to_dump(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_releases(path: &Path) -> Result<ReleaseSeries> {
    let reader = BufReader::new(File::open(path)?);
    let mut series: Option<ReleaseSeries> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReleaseLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: i + 1,
            reason: e.to_string(),
        })?;
        let tree = PrivateTree::from_dump(&parsed.tree)?;
        let series = series.get_or_insert_with(|| ReleaseSeries::new(*tree.domain()));
        series.push(Release {
            t: parsed.t,
            tree: Arc::new(tree),
            published: parsed.published,
            group_lengths: parsed.group_lengths,
        })?;
    }
    series.ok_or_else(|| Error::EmptyInput(format!("{} holds no releases", path.display())))
}

pub fn write_ledger(dir: &Path, method: Method, ledger: &BudgetLedger) -> Result<()> {
    let meta = LedgerMeta {
        method,
        epsilon: ledger.epsilon().as_epsilon(),
        w: ledger.w(),
        epsilon_nanos: ledger.epsilon().nanos(),
    };
    serde_json::to_writer_pretty(File::create(dir.join(LEDGER_META_FILE))?, &meta)?;
    let mut out = BufWriter::new(File::create(dir.join(LEDGER_FILE))?);
    for e in ledger.entries() {
        let line = LedgerLine {
            t: e.t,
            eps1: e.eps1.as_epsilon(),
            eps2: e.eps2.as_epsilon(),
            eps1_nanos: e.eps1.nanos(),
            eps2_nanos: e.eps2.nanos(),
            k_star: e.k_star,
            decision: e.decision,
            method,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `ledger.jsonl` and, if present beside it, `ledger_meta.json`.
pub fn read_ledger(path: &Path) -> Result<(Option<LedgerMeta>, Vec<LedgerEntry>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: LedgerLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: i + 1,
            reason: e.to_string(),
        })?;
        entries.push(LedgerEntry {
            t: l.t,
            eps1: Budget::from_nanos(l.eps1_nanos),
            eps2: Budget::from_nanos(l.eps2_nanos),
            k_star: l.k_star,
            decision: l.decision,
        });
    }
    let meta_path = path.with_file_name(LEDGER_META_FILE);
    let meta = if meta_path.exists() {
        Some(serde_json::from_reader(BufReader::new(File::open(
            meta_path,
        )?))?)
    } else {
        None
    };
    Ok((meta, entries))
}

/// Writes the ledger, plus releases when the run asked for them.
pub fn write_run(dir: &Path, output: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_ledger(dir, output.method, &output.ledger)?;
    if output.config.dump_releases {
        write_releases(dir, &output.series)?;
    }
    Ok(())
}
