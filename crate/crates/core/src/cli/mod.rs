//! Command-line front end. Every subcommand accepts `--json` to print a single JSON document
//! on stdout; logs go to stderr.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fsio;
use crate::scheduler::{
    candidate_pool, evaluate, run, selection_batch, sweep, write_run_outputs, Metrics, RunConfig, RunTrace, SweepAxis, CONFIG_FILE,
    METRICS_FILE, TRACE_FILE,
};
use crate::scorer::{parse_template, ScorerContext};
use crate::selector::{
    brute_force_best, epsilon_estimate, greedy_select, marginal_curve, GreedyConfig, MarginalCurve, ObjectiveOracle,
    SetFunction,
};
use crate::store::synth::{generate_world, SynthConfig};
use crate::store::{load_store, save_store, vocab_tsv, Store};
use crate::vocab::{filter_vocab, CandidatePool, FilterConfig};

#[derive(Debug, Parser)]
#[command(name = "ipl", version, about = "Interpretable prompt learning over frozen embeddings")]
pub struct Cli {
    /// Overrides the seed in configuration files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallel workers; overrides configuration files.
    #[arg(long, global = true, env = "IPL_WORKERS")]
    pub workers: Option<usize>,
    /// Print one JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a vocab.tsv into a candidate pool.
    Filter(FilterArgs),
    /// Generate a synthetic store.
    Synth(SynthArgs),
    /// Run selection and training on a store.
    Run(RunArgs),
    /// Repeat a run over values of k, t or lambda.
    Sweep(SweepArgs),
    /// Compare greedy selection with the exact optimum on a small pool.
    Oracle(OracleArgs),
    /// Marginal-gain curve and submodularity estimate for a finished run.
    Diag(DiagArgs),
    /// Collect a run's outputs into report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output pool TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Rejection report path; defaults to `rejections.json` next to the pool.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Filter settings as JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub min_length: Option<usize>,
    #[arg(long)]
    pub zipf: Option<f64>,
    #[arg(long)]
    pub no_lexicon: bool,
    #[arg(long)]
    pub max_pieces: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    K,
    T,
    Lambda,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tokens to select; defaults to the config's k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Use only the first N candidates of the filtered pool.
    #[arg(long, default_value_t = 12)]
    pub pool_limit: usize,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    /// Run directory holding trace.json.
    #[arg(long)]
    pub run: PathBuf,
    /// Store for the submodularity estimate; skipped when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Use only the first N candidates for the estimate.
    #[arg(long)]
    pub pool_limit: Option<usize>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Output path; defaults to report.json in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const DIAG_FILE: &str = "diag.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const ORACLE_FILE: &str = "oracle.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub greedy_value: f64,
    pub optimal_value: f64,
    /// `greedy_value / optimal_value`; absent when the optimum is not positive.
    pub ratio: Option<f64>,
    pub optimal_words: Vec<String>,
    pub trace: Vec<crate::selector::SelectionStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagReport {
    pub curve: MarginalCurve,
    pub epsilon: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub created_unix: u64,
    pub metrics: Metrics,
    pub selected: Vec<String>,
    pub curve: MarginalCurve,
    pub final_train_loss: f64,
    pub epsilon: Option<f64>,
    pub oracle_ratio: Option<f64>,
}

/// Reads a JSON settings file; malformed or unknown keys are configuration errors.
fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    fsio::read_json(path).map_err(|e| match e {
        Error::Format(m) => Error::Config(m),
        e => e,
    })
}

fn load_run_config(path: Option<&Path>, cli: &Cli) -> Result<RunConfig> {
    let mut cfg: RunConfig = match path {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(cli: &Cli, value: &Value, human: &str) {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(value).expect("json value"));
    } else {
        println!("{human}");
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn cmd_filter(cli: &Cli, a: &FilterArgs) -> Result<()> {
    let mut cfg: FilterConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => FilterConfig::default(),
    };
    if let Some(v) = a.min_length {
        cfg.min_length = v;
    }
    if let Some(v) = a.zipf {
        cfg.zipf_threshold = v;
    }
    if a.no_lexicon {
        cfg.require_lexicon = false;
    }
    if let Some(v) = a.max_pieces {
        cfg.max_pieces = v;
    }
    let raw = vocab_tsv::parse(&fsio::read_to_string(&a.vocab)?, &a.vocab.display().to_string())?;
    let (pool, report) = filter_vocab(&raw, &cfg);
    fsio::write_atomic(&a.out, vocab_tsv::render(pool.entries()).as_bytes())?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.out.parent().unwrap_or(Path::new(".")).join("rejections.json"));
    fsio::write_json(&report_path, &report)?;
    emit(
        cli,
        &to_value(&report),
        &format!(
            "kept {} of {} (length {}, lexicon {}, zipf {}, pieces {}, duplicate {})",
            report.kept,
            raw.len(),
            report.length,
            report.lexicon,
            report.zipf,
            report.pieces,
            report.duplicate
        ),
    );
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let cfg: SynthConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => SynthConfig::default(),
    };
    let seed = cli.seed.unwrap_or(0);
    let world = generate_world(&cfg, seed)?;
    save_store(&world.store, &a.out)?;
    fsio::write_json(&a.out.join("synth_truth.json"), &world.truth)?;
    let ds = world.store.dataset();
    emit(
        cli,
        &json!({
            "out": a.out,
            "seed": seed,
            "tokens": world.store.tokens().rows(),
            "images": ds.images.rows(),
            "classes": ds.num_classes(),
            "truth": to_value(&world.truth),
        }),
        &format!(
            "wrote {} tokens, {} images, {} classes to {}",
            world.store.tokens().rows(),
            ds.images.rows(),
            ds.num_classes(),
            a.out.display()
        ),
    );
    Ok(())
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref(), cli)?;
    let store = load_store(&a.store)?;
    let pool = candidate_pool(&store, &cfg);
    let result = run(&store, &pool, &cfg)?;
    let metrics = evaluate(&result.state, &store)?;
    write_run_outputs(&a.out, &result, &metrics)?;
    let selected: Vec<&str> = result.trace.selection_steps.iter().map(|s| s.chosen.as_str()).collect();
    emit(
        cli,
        &json!({
            "out": a.out,
            "metrics": to_value(&metrics),
            "selected": selected,
            "final_train_loss": result.trace.final_train_loss,
        }),
        &format!(
            "base {:.2}  novel {:.2}  hm {:.2}  selected [{}]",
            metrics.base,
            metrics.novel,
            metrics.hm,
            selected.join(", ")
        ),
    );
    Ok(())
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref(), cli)?;
    let store = load_store(&a.store)?;
    let pool = candidate_pool(&store, &cfg);
    let axis = match a.axis {
        AxisArg::K => SweepAxis::K,
        AxisArg::T => SweepAxis::Interval,
        AxisArg::Lambda => SweepAxis::Lambda,
    };
    let summary = sweep(&store, &pool, &cfg, axis, &a.values, &a.out)?;
    let mut human = format!("{:>8} {:>8} {:>8} {:>8} {:>12}\n", axis.name(), "base", "novel", "hm", "train_loss");
    for r in &summary.rows {
        human.push_str(&format!(
            "{:>8} {:>8.2} {:>8.2} {:>8.2} {:>12.6}\n",
            r.value, r.base, r.novel, r.hm, r.final_train_loss
        ));
    }
    human.push_str(&format!("recommended {} = {}", axis.name(), summary.recommended));
    emit(cli, &to_value(&summary), &human);
    Ok(())
}

/// Objective oracle over the base training split, as used by `run` for selection.
fn selection_context<'s>(store: &'s Store, cfg: &RunConfig) -> Result<ScorerContext<'s>> {
    let batch = selection_batch(store, cfg)?;
    let template = parse_template(&cfg.template, store)?;
    ScorerContext::from_template(store, &template, batch, cfg.tau, cfg.encoder)
}

pub fn oracle_report(
    pool: &CandidatePool,
    k: usize,
    oracle: &dyn SetFunction,
    greedy: &GreedyConfig,
) -> Result<OracleReport> {
    let trace = greedy_select(pool, k, oracle, greedy, |_| Ok(()))?;
    let chosen: Vec<_> = trace.iter().map(|s| s.token_id).collect();
    let greedy_value = oracle.value(&chosen)?;
    let best = brute_force_best(pool, k, oracle)?;
    let ratio = (best.value > 0.0).then(|| greedy_value / best.value);
    Ok(OracleReport { greedy_value, optimal_value: best.value, ratio, optimal_words: best.words, trace })
}

fn cmd_oracle(cli: &Cli, a: &OracleArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref(), cli)?;
    let store = load_store(&a.store)?;
    let pool = candidate_pool(&store, &cfg).truncated(a.pool_limit);
    let ctx = selection_context(&store, &cfg)?;
    let oracle = ObjectiveOracle { ctx: &ctx, lambda: cfg.lambda };
    let greedy = GreedyConfig { workers: cfg.workers, lazy: cfg.lazy_greedy };
    let report = oracle_report(&pool, a.k.unwrap_or(cfg.k), &oracle, &greedy)?;
    if let Some(p) = &a.out {
        fsio::write_json(p, &report)?;
    }
    let ratio = report.ratio.map_or("n/a".to_string(), |r| format!("{r:.6}"));
    emit(
        cli,
        &to_value(&report),
        &format!(
            "greedy {:.6}  optimal {:.6}  ratio {ratio}",
            report.greedy_value, report.optimal_value
        ),
    );
    Ok(())
}

fn cmd_diag(cli: &Cli, a: &DiagArgs) -> Result<()> {
    let trace: RunTrace = fsio::read_json(&a.run.join(TRACE_FILE))?;
    let curve = marginal_curve(&trace.selection_steps);
    let epsilon = match &a.store {
        None => None,
        Some(dir) => {
            let mut cfg = trace.config.clone();
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let store = load_store(dir)?;
            let mut pool = candidate_pool(&store, &cfg);
            if let Some(n) = a.pool_limit {
                pool = pool.truncated(n);
            }
            let ctx = selection_context(&store, &cfg)?;
            let oracle = ObjectiveOracle { ctx: &ctx, lambda: cfg.lambda };
            Some(epsilon_estimate(&oracle, &pool, a.samples, cfg.seed)?)
        }
    };
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    let diag = DiagReport { curve, epsilon, samples: a.samples };
    fsio::write_json(&out.join(DIAG_FILE), &diag)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("curve csv: {e}"));
    w.write_record(["step", "gain"]).map_err(err)?;
    for (i, g) in diag.curve.gains.iter().enumerate() {
        w.write_record([(i + 1).to_string(), g.to_string()]).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("curve csv: {e}")))?;
    fsio::write_atomic(&out.join(CURVE_FILE), &bytes)?;
    let slope = diag.curve.slope.map_or("n/a".to_string(), |s| format!("{s:.6}"));
    let eps = diag.epsilon.map_or("n/a".to_string(), |e| format!("{e:.6}"));
    emit(cli, &to_value(&diag), &format!("steps {}  slope {slope}  epsilon {eps}", diag.curve.gains.len()));
    Ok(())
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        fsio::read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let trace: RunTrace = fsio::read_json(&a.run.join(TRACE_FILE))?;
    let metrics: Metrics = fsio::read_json(&a.run.join(METRICS_FILE))?;
    let config: RunConfig = read_optional(&a.run.join(CONFIG_FILE))?.unwrap_or_else(|| trace.config.clone());
    let diag: Option<DiagReport> = read_optional(&a.run.join(DIAG_FILE))?;
    let oracle: Option<OracleReport> = read_optional(&a.run.join(ORACLE_FILE))?;
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let report = Report {
        config_hash: config.hash(),
        seed: config.seed,
        created_unix,
        metrics,
        selected: trace.selection_steps.iter().map(|s| s.chosen.clone()).collect(),
        curve: marginal_curve(&trace.selection_steps),
        final_train_loss: trace.final_train_loss,
        epsilon: diag.and_then(|d| d.epsilon),
        oracle_ratio: oracle.and_then(|o| o.ratio),
    };
    let out = a.out.clone().unwrap_or_else(|| a.run.join(REPORT_FILE));
    fsio::write_json(&out, &report)?;
    emit(
        cli,
        &to_value(&report),
        &format!(
            "config {}  base {:.2}  novel {:.2}  hm {:.2}  selected [{}]",
            &report.config_hash[..12],
            report.metrics.base,
            report.metrics.novel,
            report.metrics.hm,
            report.selected.join(", ")
        ),
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Filter(a) => cmd_filter(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Run(a) => cmd_run(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Oracle(a) => cmd_oracle(cli, a),
        Command::Diag(a) => cmd_diag(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    }
}

/// Process exit code for an error kind.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::Format(_) | Error::Integrity(_) => 4,
        _ => 1,
    }
}

pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
