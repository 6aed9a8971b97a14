use std::error::Error as StdError;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use mtsp_core::adaptive::Theta1;
use mtsp_core::budget::{audit, Budget};
use mtsp_core::dump::{self, LEDGER_FILE, LEDGER_META_FILE, RELEASES_FILE};
use mtsp_core::eval::{evaluate, EvalPlan};
use mtsp_core::grid::{results_table, run_experiment_grid, write_grid_outputs, GridConfig};
use mtsp_core::ingest::{ingest_csv, CsvSchema};
use mtsp_core::pipeline::OracleKind;
use mtsp_core::query::QueryItem;
use mtsp_core::synth::{synthesize_stream, SyntheticSpec};
use mtsp_core::{run_method, Method, RunConfig, StreamDataset};

type CliResult<T> = Result<T, Box<dyn StdError>>;

/// Reports kept per timestamp unless `--full-scale` is given.
const DESK_SCALE_CAP: usize = 100_000;

#[derive(Parser)]
#[command(
    name = "mtsp",
    version,
    about = "Streaming histogram publication under w-event LDP"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mechanism over a stream and write its ledger and summary.
    Run(RunArgs),
    /// Sweep methods, budgets, windows and seeds from a JSON config.
    Grid(GridArgs),
    /// Answer a batch of queries from dumped releases.
    Query(QueryArgs),
    /// Re-check every window of a dumped ledger.
    Audit(AuditArgs),
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// CSV event log.
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// JSON synthetic stream spec.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long, default_value = "timestamp")]
    ts_col: String,
    #[arg(long, default_value = "user")]
    user_col: String,
    #[arg(long, default_value = "value")]
    value_col: String,
    /// Drop numeric values above this quantile before encoding.
    #[arg(long)]
    trim_quantile: Option<f64>,
    /// Keep every CSV report instead of subsampling to 100k per timestamp.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Oue,
    OuePerUser,
    Exact,
}

impl From<OracleArg> for OracleKind {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::Oue => OracleKind::Oue,
            OracleArg::OuePerUser => OracleKind::OuePerUser,
            OracleArg::Exact => OracleKind::Exact,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// mtsp, lbu, lsp, lbd or lba.
    #[arg(long)]
    method: Method,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    window: usize,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    exact_oba: bool,
    #[arg(long)]
    literal_alg1: bool,
    #[arg(long)]
    clamp_output: bool,
    #[arg(long)]
    dump_releases: bool,
    /// Fixed pruning threshold in place of the derived one.
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long, value_enum, default_value = "oue")]
    oracle: OracleArg,
    #[arg(long)]
    lbd_decay: Option<f64>,
    #[arg(long)]
    lba_max_quanta: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct QueryArgs {
    /// Directory holding releases.jsonl.
    #[arg(long)]
    releases: PathBuf,
    /// JSON array of queries.
    #[arg(long)]
    queries: PathBuf,
    /// Raw stream for ground truth.
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    clamp_output: bool,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    /// Directory holding ledger.jsonl.
    #[arg(long)]
    ledger: PathBuf,
    /// Needed when ledger_meta.json is absent.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Query(a) => cmd_query(a),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_source(src: &SourceArgs) -> CliResult<Option<StreamDataset>> {
    if let Some(path) = &src.synthetic {
        let spec: SyntheticSpec = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        return Ok(Some(synthesize_stream(&spec)?.dataset));
    }
    let Some(path) = &src.dataset else {
        return Ok(None);
    };
    let schema = CsvSchema {
        ts_col: src.ts_col.clone(),
        user_col: src.user_col.clone(),
        value_col: src.value_col.clone(),
        trim_quantile: src.trim_quantile,
        max_reports_per_timestamp: (!src.full_scale).then_some(DESK_SCALE_CAP),
        subsample_seed: 0,
    };
    Ok(Some(ingest_csv(path, &schema)?))
}

fn cmd_run(a: RunArgs) -> CliResult<ExitCode> {
    let data = load_source(&a.source)?.ok_or("run needs --dataset or --synthetic")?;
    info!(
        "stream: {} timestamps, d={}, {} reports",
        data.len(),
        data.domain().size(),
        data.total_reports()
    );
    let mut cfg = RunConfig::new(a.method, a.epsilon, a.window, a.seed);
    cfg.oracle = a.oracle.into();
    cfg.exact_oba = a.exact_oba;
    cfg.literal_alg1 = a.literal_alg1;
    cfg.clamp_output = a.clamp_output;
    cfg.dump_releases = a.dump_releases;
    if let Some(v) = a.theta1 {
        cfg.theta1 = Theta1::Fixed(v);
    }
    if let Some(d) = a.lbd_decay {
        cfg.lbd_decay = d;
    }
    cfg.lba_max_quanta = a.lba_max_quanta;

    let out = run_method(&data, &cfg)?;
    dump::write_run(&a.out, &out)?;
    let report = audit(out.ledger.entries(), out.ledger.epsilon(), cfg.w)?;
    let plan = EvalPlan {
        range_seed: cfg.seed,
        ..EvalPlan::default()
    };
    let evaluation = match evaluate(&data, &out, &plan) {
        Ok(e) => Some(e),
        Err(e) => {
            warn!("evaluation skipped: {e}");
            None
        }
    };
    let summary = json!({
        "config": cfg,
        "timestamps": data.len(),
        "d": data.domain().size(),
        "total_reports": data.total_reports(),
        "publication_fraction": out.steady_publication_fraction(),
        "mean_seconds_per_timestamp": out.timing.mean_per_timestamp().as_secs_f64(),
        "total_seconds": out.timing.total.as_secs_f64(),
        "audit": report,
        "evaluation": evaluation,
    });
    fs::write(
        a.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    if let Some(e) = &evaluation {
        info!(
            "counting MAE {:.6e}, publication fraction {:.3}",
            e.counting_mae, e.publication_fraction
        );
    }
    info!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(a: GridArgs) -> CliResult<ExitCode> {
    let mut cfg: GridConfig = serde_json::from_reader(BufReader::new(File::open(&a.config)?))?;
    if let Some(out) = a.out {
        cfg.out_dir = Some(out);
    }
    cfg.svg |= a.svg;
    let dir = cfg
        .out_dir
        .clone()
        .ok_or("grid needs --out or out_dir in the config")?;
    let result = run_experiment_grid(&cfg)?;
    write_grid_outputs(&result, &dir, cfg.svg)?;
    print!("{}", results_table(&result));
    let failed: usize = result.cells.iter().map(|c| c.failures.len()).sum();
    if failed > 0 {
        warn!("{failed} runs failed; see failures.txt");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_query(a: QueryArgs) -> CliResult<ExitCode> {
    let series = dump::read_releases(&a.releases.join(RELEASES_FILE))?.with_clamp(a.clamp_output);
    let items: Vec<QueryItem> = serde_json::from_reader(BufReader::new(File::open(&a.queries)?))?;
    let truth = load_source(&a.source)?;
    let window = read_window(&a.releases);

    let mut out: csv::Writer<Box<dyn std::io::Write>> = csv::Writer::from_writer(match &a.out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout()),
    });
    out.write_record([
        "query_id",
        "estimate",
        "ground_truth",
        "abs_err",
        "rel_err",
        "note",
    ])?;
    let fmt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    for (i, q) in items.iter().enumerate() {
        let id = q.id.clone().unwrap_or_else(|| i.to_string());
        let mut notes = Vec::new();
        if let Some(w) = window {
            let reach = q.params.delta + q.params.lag.unwrap_or(0);
            if reach > w {
                notes.push(format!("span {reach} exceeds window {w}"));
            }
        }
        let est = match q.answer(&series) {
            Ok(x) => x,
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        };
        let gt = match &truth {
            Some(d) => q.ground_truth(d).unwrap_or_else(|e| {
                notes.push(format!("truth: {e}"));
                None
            }),
            None => None,
        };
        if est.is_none() && notes.is_empty() {
            notes.push("not ready".into());
        }
        let abs = est.zip(gt).map(|(e, g)| (e - g).abs());
        let rel = abs
            .zip(gt)
            .and_then(|(d, g)| (g != 0.0).then(|| d / g.abs()));
        out.write_record([id, fmt(est), fmt(gt), fmt(abs), fmt(rel), notes.join("; ")])?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn read_window(dir: &Path) -> Option<usize> {
    let file = File::open(dir.join(LEDGER_META_FILE)).ok()?;
    let meta: dump::LedgerMeta = serde_json::from_reader(BufReader::new(file)).ok()?;
    Some(meta.w)
}

fn cmd_audit(a: AuditArgs) -> CliResult<ExitCode> {
    let (meta, entries) = dump::read_ledger(&a.ledger.join(LEDGER_FILE))?;
    let (epsilon, w) = match (meta, a.epsilon, a.window) {
        (_, Some(e), Some(w)) => (Budget::from_epsilon(e)?, w),
        (Some(m), e, w) => (
            e.map_or(
                Ok(Budget::from_nanos(m.epsilon_nanos)),
                Budget::from_epsilon,
            )?,
            w.unwrap_or(m.w),
        ),
        (None, _, _) => return Err("no ledger_meta.json; pass --epsilon and --window".into()),
    };
    let report = audit(&entries, epsilon, w)?;
    println!(
        "windows checked: {}, max spend: {:.9}, cap: {:.9}",
        report.windows_checked,
        report.max_window_spend.as_epsilon(),
        report.cap.as_epsilon()
    );
    for v in &report.violations {
        println!(
            "violation: [{}, {}] spends {:.9}",
            v.start,
            v.end,
            v.spent.as_epsilon()
        );
    }
    if report.passed() {
        println!("audit passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "audit FAILED: {} windows over budget",
            report.violations.len()
        );
        Ok(ExitCode::FAILURE)
    }
}
