//! Parameter sweeps over methods, budgets, windows and seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::Theta1;
use crate::budget::audit;
use crate::domain::StreamDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalPlan, Evaluation};
use crate::ingest::{ingest_csv, CsvSchema};
use crate::metrics::mean_stderr;
use crate::pipeline::{run_method, Method, OracleKind, RunConfig};
use crate::seed::{derive_seed, stage};
use crate::synth::{synthesize_stream, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        spec: SyntheticSpec,
        /// Draw a fresh stream for every grid seed.
        #[serde(default = "yes")]
        resample_per_seed: bool,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

fn yes() -> bool {
    true
}

/// Run flags shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(default)]
    pub theta1: Theta1,
    #[serde(default)]
    pub oracle: OracleKind,
    #[serde(default)]
    pub exact_oba: bool,
    #[serde(default)]
    pub literal_alg1: bool,
    #[serde(default)]
    pub clamp_output: bool,
    #[serde(default)]
    pub lbd_decay: Option<f64>,
    #[serde(default)]
    pub lba_max_quanta: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            theta1: Theta1::Derived,
            oracle: OracleKind::Oue,
            exact_oba: false,
            literal_alg1: false,
            clamp_output: false,
            lbd_decay: None,
            lba_max_quanta: None,
        }
    }
}

impl RunOptions {
    pub fn config(&self, method: Method, epsilon: f64, w: usize, seed: u64) -> RunConfig {
        let mut c = RunConfig::new(method, epsilon, w, seed);
        c.theta1 = self.theta1;
        c.oracle = self.oracle;
        c.exact_oba = self.exact_oba;
        c.literal_alg1 = self.literal_alg1;
        c.clamp_output = self.clamp_output;
        if let Some(decay) = self.lbd_decay {
            c.lbd_decay = decay;
        }
        c.lba_max_quanta = self.lba_max_quanta;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub methods: Vec<Method>,
    pub epsilons: Vec<f64>,
    pub windows: Vec<usize>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub eval: EvalPlan,
    #[serde(default)]
    pub run: RunOptions,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub svg: bool,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty()
            || self.epsilons.is_empty()
            || self.windows.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::Config(
                "grid needs at least one method, epsilon, window and seed".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub evaluation: Evaluation,
    pub audit_windows: usize,
    pub audit_violations: usize,
    pub mean_seconds_per_timestamp: f64,
}

/// Mean and standard error over the seeds that produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Summary {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let (mean, stderr) = mean_stderr(xs);
        Some(Self {
            mean,
            stderr,
            count: xs.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub method: Method,
    pub epsilon: f64,
    pub w: usize,
    pub seeds: Vec<SeedResult>,
    pub failures: Vec<String>,
    pub counting_mae: Option<Summary>,
    pub counting_mre: Option<Summary>,
    pub range_mae: Option<Summary>,
    pub range_mre: Option<Summary>,
    pub auc: Option<Summary>,
    pub publication_fraction: Option<Summary>,
    pub audit_violations: usize,
}

impl CellResult {
    fn aggregate(
        method: Method,
        epsilon: f64,
        w: usize,
        runs: Vec<std::result::Result<SeedResult, String>>,
    ) -> Self {
        let mut seeds = Vec::new();
        let mut failures = Vec::new();
        for r in runs {
            match r {
                Ok(s) => seeds.push(s),
                Err(e) => failures.push(e),
            }
        }
        let collect = |f: &dyn Fn(&Evaluation) -> Option<f64>| -> Option<Summary> {
            Summary::of(
                &seeds
                    .iter()
                    .filter_map(|s| f(&s.evaluation))
                    .collect::<Vec<_>>(),
            )
        };
        Self {
            method,
            epsilon,
            w,
            counting_mae: collect(&|e| Some(e.counting_mae)),
            counting_mre: collect(&|e| e.counting_mre.value),
            range_mae: collect(&|e| e.range_mae),
            range_mre: collect(&|e| e.range_mre.and_then(|m| m.value)),
            auc: collect(&|e| e.auc),
            publication_fraction: collect(&|e| Some(e.publication_fraction)),
            audit_violations: seeds.iter().map(|s| s.audit_violations).sum(),
            seeds,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
}

impl GridResult {
    pub fn cell(&self, method: Method, epsilon: f64, w: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.epsilon == epsilon && c.w == w)
    }
}

fn load_datasets(config: &GridConfig) -> Result<Vec<Arc<StreamDataset>>> {
    match &config.dataset {
        DatasetSource::Synthetic {
            spec,
            resample_per_seed: true,
        } => config
            .seeds
            .par_iter()
            .map(|&seed| {
                let spec = SyntheticSpec {
                    seed: derive_seed(spec.seed, &[stage::DATASET, seed]),
                    ..spec.clone()
                };
                Ok(Arc::new(synthesize_stream(&spec)?.dataset))
            })
            .collect(),
        DatasetSource::Synthetic {
            spec,
            resample_per_seed: false,
        } => {
            let data = Arc::new(synthesize_stream(spec)?.dataset);
            Ok(vec![data; config.seeds.len()])
        }
        DatasetSource::Csv { path, schema } => {
            let data = Arc::new(ingest_csv(path, schema)?);
            Ok(vec![data; config.seeds.len()])
        }
    }
}

fn run_one(dataset: &StreamDataset, config: &RunConfig, plan: &EvalPlan) -> Result<SeedResult> {
    let out = run_method(dataset, config)?;
    let report = audit(out.ledger.entries(), out.ledger.epsilon(), out.ledger.w())?;
    if !report.passed() {
        log::error!(
            "{} eps={} w={} seed={}: {} window violations",
            config.method,
            config.epsilon,
            config.w,
            config.seed,
            report.violations.len()
        );
    }
    let evaluation = evaluate(dataset, &out, plan)?;
    Ok(SeedResult {
        seed: config.seed,
        evaluation,
        audit_windows: report.windows_checked,
        audit_violations: report.violations.len(),
        mean_seconds_per_timestamp: out.timing.mean_per_timestamp().as_secs_f64(),
    })
}

/// Runs every (method, ε, w, seed) combination in parallel. A failing
/// combination is recorded on its cell and does not stop the grid.
pub fn run_experiment_grid(config: &GridConfig) -> Result<GridResult> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let mut cells = Vec::new();
    for &method in &config.methods {
        for &epsilon in &config.epsilons {
            for &w in &config.windows {
                cells.push((method, epsilon, w));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.seeds.len()).map(move |s| (c, s)))
        .collect();
    let results: Vec<std::result::Result<SeedResult, String>> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let (method, epsilon, w) = cells[c];
            let seed = config.seeds[s];
            let rc = config.run.config(method, epsilon, w, seed);
            run_one(&datasets[s], &rc, &config.eval).map_err(|e| format!("seed {seed}: {e}"))
        })
        .collect();
    let mut results = results.into_iter();
    let cells = cells
        .into_iter()
        .map(|(method, epsilon, w)| {
            let runs: Vec<_> = results.by_ref().take(config.seeds.len()).collect();
            CellResult::aggregate(method, epsilon, w, runs)
        })
        .collect();
    Ok(GridResult { cells })
}

fn fmt_opt(s: Option<Summary>) -> (String, String) {
    match s {
        Some(s) => (format!("{:.6e}", s.mean), format!("{:.6e}", s.stderr)),
        None => (String::new(), String::new()),
    }
}

pub const TABLE_FILE: &str = "table.csv";
pub const TIMING_FILE: &str = "timing.csv";

/// Cell summary table, one row per (method, ε, w).
pub fn results_table(result: &GridResult) -> String {
    let mut out = String::from(
        "method,epsilon,w,seeds_ok,seeds_failed,mae,mae_stderr,mre,mre_stderr,range_mae,range_mae_stderr,\
         range_mre,range_mre_stderr,auc,auc_stderr,publication_fraction,audit_violations\n",
    );
    for c in &result.cells {
        let cols = [
            c.counting_mae,
            c.counting_mre,
            c.range_mae,
            c.range_mre,
            c.auc,
            c.publication_fraction,
        ]
        .map(fmt_opt);
        let _ = write!(
            out,
            "{},{},{},{},{}",
            c.method,
            c.epsilon,
            c.w,
            c.seeds.len(),
            c.failures.len()
        );
        for (i, (m, s)) in cols.iter().enumerate() {
            if i == cols.len() - 1 {
                let _ = write!(out, ",{m}");
            } else {
                let _ = write!(out, ",{m},{s}");
            }
        }
        let _ = writeln!(out, ",{}", c.audit_violations);
    }
    out
}

fn roc_file_name(c: &CellResult) -> String {
    format!("roc_{}_eps{}_w{}.csv", c.method, c.epsilon, c.w)
}

/// Writes the summary table, per-cell ROC points, timings, failures and
/// (optionally) SVG charts of MAE against ε and against w.
pub fn write_grid_outputs(result: &GridResult, dir: &Path, svg: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TABLE_FILE), results_table(result))?;
    let mut timing = String::from("method,epsilon,w,seed,seconds_per_timestamp\n");
    let mut failures = String::new();
    for c in &result.cells {
        for s in &c.seeds {
            let _ = writeln!(
                timing,
                "{},{},{},{},{:.6e}",
                c.method, c.epsilon, c.w, s.seed, s.mean_seconds_per_timestamp
            );
        }
        for f in &c.failures {
            let _ = writeln!(failures, "{} eps={} w={}: {f}", c.method, c.epsilon, c.w);
        }
        if c.seeds.iter().any(|s| s.evaluation.roc.is_some()) {
            let mut roc = String::from("seed,threshold,fpr,tpr\n");
            for s in &c.seeds {
                for p in s.evaluation.roc.iter().flatten() {
                    let _ = writeln!(roc, "{},{},{},{}", s.seed, p.threshold, p.fpr, p.tpr);
                }
            }
            fs::write(dir.join(roc_file_name(c)), roc)?;
        }
    }
    fs::write(dir.join(TIMING_FILE), timing)?;
    if !failures.is_empty() {
        fs::write(dir.join("failures.txt"), failures)?;
    }
    if svg {
        let ws = distinct(result.cells.iter().map(|c| c.w as f64));
        let eps = distinct(result.cells.iter().map(|c| c.epsilon));
        for &w in &ws {
            let chart = line_chart(result, "epsilon", |c| {
                (c.w as f64 == w).then_some(c.epsilon)
            });
            fs::write(dir.join(format!("mae_vs_epsilon_w{w}.svg")), chart)?;
        }
        for &e in &eps {
            let chart = line_chart(result, "w", |c| (c.epsilon == e).then_some(c.w as f64));
            fs::write(dir.join(format!("mae_vs_w_eps{e}.svg")), chart)?;
        }
    }
    Ok(())
}

fn distinct(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

const PALETTE: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

/// Minimal self-contained SVG: one polyline of mean counting MAE per method
/// against the x value chosen by `x_of`.
fn line_chart(
    result: &GridResult,
    x_label: &str,
    x_of: impl Fn(&CellResult) -> Option<f64>,
) -> String {
    let (width, height, margin) = (480.0, 320.0, 50.0);
    let mut series: Vec<(Method, Vec<(f64, f64)>)> = Vec::new();
    for c in &result.cells {
        let (Some(x), Some(mae)) = (x_of(c), c.counting_mae) else {
            continue;
        };
        match series.iter_mut().find(|(m, _)| *m == c.method) {
            Some((_, pts)) => pts.push((x, mae.mean)),
            None => series.push((c.method, vec![(x, mae.mean)])),
        }
    }
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| {
        all.iter().map(sel).fold(init, f)
    };
    let (x0, x1) = (
        fold(f64::min, f64::INFINITY, |p| p.0),
        fold(f64::max, f64::NEG_INFINITY, |p| p.0),
    );
    let y1 = fold(f64::max, 0.0, |p| p.1);
    let sx =
        |x: f64| margin + if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 } * (width - 2.0 * margin);
    let sy =
        |y: f64| height - margin - if y1 > 0.0 { y / y1 } else { 0.0 } * (height - 2.0 * margin);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = margin,
        b = height - margin,
        r = width - margin
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
        width / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">MAE</text>",
        height / 2.0,
        height / 2.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.3e}</text>",
        margin - 4.0,
        margin + 4.0
    );
    for x in distinct(all.iter().map(|p| p.0)) {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x}</text>",
            sx(x),
            height - margin + 14.0
        );
    }
    for (i, (method, pts)) in series.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{method}</text>",
            width - margin + 4.0,
            margin + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
