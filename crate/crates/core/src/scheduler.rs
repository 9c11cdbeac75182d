//! Interleaves greedy token selection with soft-prompt training, then evaluates.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsio;
use crate::prompt::checkpoint::{save_checkpoint, PromptCheckpoint};
use crate::prompt::{accuracy, build_layout, contrastive_loss_grad, Batch, PromptState, TextEncoder};
use crate::scorer::{parse_template, subsample, ScorerContext, DEFAULT_TEMPLATE};
use crate::selector::{greedy_step, GreedyConfig, LazyGreedy, ObjectiveOracle, SelectionStep};
use crate::store::{EmbeddingTable, Store, TokenId};
use crate::vocab::{filter_vocab, pool_remove, CandidatePool, FilterConfig};

const SUBSAMPLE_SEED_SALT: u64 = 0x5e1e_c7ed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Semantic tokens to select.
    pub k: usize,
    /// Training epochs after each selection.
    #[serde(alias = "t")]
    pub interval: usize,
    /// Total training epochs.
    #[serde(alias = "T")]
    pub epochs: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Soft tokens before each semantic slot.
    pub m: usize,
    /// Total soft tokens.
    pub n: usize,
    pub workers: usize,
    pub template: String,
    pub seed: u64,
    /// Fraction of the base training images used to score candidates.
    pub selection_subsample: f64,
    /// Score candidates with the current soft prompt instead of the template.
    pub select_with_trained_prompt: bool,
    pub lazy_greedy: bool,
    pub encoder: TextEncoder,
    pub init_std: f64,
    pub filter: FilterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 3,
            interval: 10,
            epochs: 100,
            alpha: 1.0,
            lambda: 0.1,
            tau: 1.0,
            m: 2,
            n: 16,
            workers: 1,
            template: DEFAULT_TEMPLATE.to_string(),
            seed: 0,
            selection_subsample: 1.0,
            select_with_trained_prompt: false,
            lazy_greedy: false,
            encoder: TextEncoder::Mean,
            init_std: 0.02,
            filter: FilterConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.interval < 1 {
            return bad("interval t must be at least 1".into());
        }
        if self.epochs < self.k.saturating_mul(self.interval) {
            return bad(format!(
                "epochs T={} must be at least k*t = {}*{}",
                self.epochs, self.k, self.interval
            ));
        }
        if self.n < self.m.saturating_mul(self.k) {
            return bad(format!("n={} must be at least m*k = {}*{}", self.n, self.m, self.k));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.workers < 1 {
            return bad("workers must be at least 1".into());
        }
        if !(self.selection_subsample > 0.0 && self.selection_subsample <= 1.0) {
            return bad(format!("selection_subsample must be in (0, 1], got {}", self.selection_subsample));
        }
        self.encoder.validate()
    }

    /// SHA-256 over the compact JSON form, whose key order is fixed by the struct.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Interleaved,
    Refinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Training loss at the start of the epoch, before its update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub layout: String,
    pub pool_size: usize,
    pub selection_steps: Vec<SelectionStep>,
    /// Epochs completed before each selection.
    pub selection_epochs: Vec<usize>,
    pub epoch_log: Vec<EpochRecord>,
    pub final_train_loss: f64,
    pub final_state: PromptCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub base: f64,
    pub novel: f64,
    pub hm: f64,
}

pub struct RunResult {
    pub trace: RunTrace,
    pub state: PromptState,
}

pub fn harmonic_mean(base: f64, novel: f64) -> Result<f64> {
    for v in [base, novel] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Domain(format!("accuracy {v} is outside [0, 100]")));
        }
    }
    if base + novel == 0.0 {
        return Err(Error::Domain("harmonic mean of two zero accuracies".into()));
    }
    Ok(2.0 * base * novel / (base + novel))
}

/// Filters the store vocabulary with the run's filter settings.
pub fn candidate_pool(store: &Store, cfg: &RunConfig) -> CandidatePool {
    filter_vocab(store.vocab(), &cfg.filter).0
}

fn training_batch(store: &Store) -> Result<(Batch, Vec<usize>)> {
    let ds = store.dataset();
    let idx = ds.train_indices(&ds.base_classes);
    if idx.is_empty() {
        return Err(Error::Precondition("no base training images".into()));
    }
    Ok((Batch::from_store(store, &ds.base_classes, &idx)?, idx))
}

/// The base training images used to score candidates, after `selection_subsample`.
pub fn selection_batch(store: &Store, cfg: &RunConfig) -> Result<Batch> {
    let (_, idx) = training_batch(store)?;
    let idx = subsample(&idx, cfg.selection_subsample, cfg.seed ^ SUBSAMPLE_SEED_SALT)?;
    Batch::from_store(store, &store.dataset().base_classes, &idx)
}

struct Trainer<'a> {
    tokens: &'a EmbeddingTable,
    batch: &'a Batch,
    tau: f64,
    alpha: f64,
    log: Vec<EpochRecord>,
}

impl Trainer<'_> {
    fn epoch(&mut self, state: PromptState, phase: Phase) -> Result<PromptState> {
        let (loss, grad) = state.loss_and_grad(self.tokens, self.batch, self.tau)?;
        self.log.push(EpochRecord { epoch: self.log.len() + 1, phase, loss });
        state.sgd_step(&grad, self.alpha)
    }
}

/// Selection interleaved with training: select, train `t` epochs, repeat `k` times, then
/// refine until `T` epochs have run.
pub fn run(store: &Store, pool: &CandidatePool, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    if cfg.k > pool.len() {
        return Err(Error::Config(format!("k={} exceeds the pool size {}", cfg.k, pool.len())));
    }
    let template = parse_template(&cfg.template, store)?;
    let (train, _) = training_batch(store)?;
    let sel_batch = selection_batch(store, cfg)?;
    let template_ctx = if cfg.select_with_trained_prompt || cfg.k == 0 {
        None
    } else {
        Some(ScorerContext::from_template(store, &template, sel_batch.clone(), cfg.tau, cfg.encoder)?)
    };

    let layout = build_layout(cfg.n, cfg.m, cfg.k)?;
    let layout_text = layout.to_string();
    let mut state = PromptState::init(layout, store.dim(), cfg.encoder, cfg.init_std, cfg.seed)?;
    let greedy = GreedyConfig { workers: cfg.workers, lazy: cfg.lazy_greedy };
    let mut lazy = LazyGreedy::default();
    let mut trainer = Trainer { tokens: store.tokens(), batch: &train, tau: cfg.tau, alpha: cfg.alpha, log: Vec::new() };

    let mut remaining = pool.clone();
    let mut selected: Vec<TokenId> = Vec::with_capacity(cfg.k);
    let mut steps = Vec::with_capacity(cfg.k);
    let mut selection_epochs = Vec::with_capacity(cfg.k);
    for q in 0..cfg.k {
        let trained_ctx;
        let ctx = match &template_ctx {
            Some(c) => c,
            None => {
                trained_ctx = ScorerContext::from_state(store, &state, sel_batch.clone(), cfg.tau)?;
                &trained_ctx
            }
        };
        let oracle = ObjectiveOracle { ctx, lambda: cfg.lambda };
        let step = if cfg.lazy_greedy {
            lazy.step(&remaining, &selected, &oracle, &greedy)?
        } else {
            greedy_step(&remaining, &selected, &oracle, &greedy)?
        };
        log::info!("selection {}: {} (gain {:.6})", q + 1, step.chosen, step.gain);
        remaining = pool_remove(&remaining, &step.chosen)?;
        selected.push(step.token_id);
        state = state.fill_semantic_slot(q, step.token_id)?;
        selection_epochs.push(trainer.log.len());
        steps.push(step);
        for _ in 0..cfg.interval {
            state = trainer.epoch(state, Phase::Interleaved)?;
        }
    }
    while trainer.log.len() < cfg.epochs {
        state = trainer.epoch(state, Phase::Refinement)?;
    }
    let final_train_loss = state.training_loss(store.tokens(), &train, cfg.tau)?;
    let trace = RunTrace {
        config: cfg.clone(),
        layout: layout_text,
        pool_size: pool.len(),
        selection_steps: steps,
        selection_epochs,
        epoch_log: trainer.log,
        final_train_loss,
        final_state: PromptCheckpoint::from_state(&state),
    };
    Ok(RunResult { trace, state })
}

/// Plain soft-prompt tuning with no semantic slots: `T` full-batch gradient steps from the
/// seeded initialization. Returns the final state and per-epoch losses.
pub fn coop_reference(store: &Store, cfg: &RunConfig) -> Result<(PromptState, Vec<f64>)> {
    let (train, _) = training_batch(store)?;
    let layout = build_layout(cfg.n, cfg.m, 0)?;
    let mut state = PromptState::init(layout, store.dim(), cfg.encoder, cfg.init_std, cfg.seed)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let ctx: Vec<&[f64]> = state.soft().iter_rows().collect();
        let (loss, grads) = contrastive_loss_grad(&cfg.encoder, &ctx, &train, cfg.tau)?;
        let grad = EmbeddingTable::new(cfg.n, store.dim(), grads.concat())?;
        losses.push(loss);
        state = state.sgd_step(&grad, cfg.alpha)?;
    }
    Ok((state, losses))
}

/// Base and novel accuracy on held-out images, in percent, and their harmonic mean.
pub fn evaluate(state: &PromptState, store: &Store) -> Result<Metrics> {
    let ds = store.dataset();
    let tokens = store.tokens();
    let ctx = state.context(tokens)?;
    let mut acc = [0.0; 2];
    for (slot, classes) in [&ds.base_classes, &ds.novel_classes].into_iter().enumerate() {
        let idx = ds.test_indices(classes);
        if idx.is_empty() {
            return Err(Error::Precondition(format!(
                "no evaluation images for the {} split",
                if slot == 0 { "base" } else { "novel" }
            )));
        }
        let batch = Batch::from_store(store, classes, &idx)?;
        acc[slot] = accuracy(state.encoder(), &ctx, &batch)?;
    }
    Ok(Metrics { base: acc[0], novel: acc[1], hm: harmonic_mean(acc[0], acc[1])? })
}

pub const TRACE_FILE: &str = "trace.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SELECTED_FILE: &str = "selected.txt";
pub const GAINS_FILE: &str = "gains.csv";
pub const PROMPT_FILE: &str = "prompt.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn gains_csv(steps: &[SelectionStep]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("gains csv: {e}"));
    w.write_record(["step", "gain", "delta_utility", "delta_redundancy"]).map_err(err)?;
    for (i, s) in steps.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            s.gain.to_string(),
            s.delta_utility.to_string(),
            s.delta_redundancy.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("gains csv: {e}")))
}

/// Writes the trace, metrics, selected words, gain table, checkpoint and resolved config.
pub fn write_run_outputs(dir: &Path, result: &RunResult, metrics: &Metrics) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fsio::write_json(&dir.join(TRACE_FILE), &result.trace)?;
    fsio::write_json(&dir.join(METRICS_FILE), metrics)?;
    fsio::write_json(&dir.join(CONFIG_FILE), &result.trace.config)?;
    let mut words = String::new();
    for s in &result.trace.selection_steps {
        words.push_str(&s.chosen);
        words.push('\n');
    }
    fsio::write_atomic(&dir.join(SELECTED_FILE), words.as_bytes())?;
    fsio::write_atomic(&dir.join(GAINS_FILE), &gains_csv(&result.trace.selection_steps)?)?;
    save_checkpoint(&result.state, &dir.join(PROMPT_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    Interval,
    Lambda,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::Interval => "t",
            SweepAxis::Lambda => "lambda",
        }
    }

    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let as_count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} must be a non-negative integer, got {v}", self.name())))
            }
        };
        match self {
            SweepAxis::K => cfg.k = as_count(value)?,
            SweepAxis::Interval => cfg.interval = as_count(value)?,
            SweepAxis::Lambda => cfg.lambda = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub base: f64,
    pub novel: f64,
    pub hm: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Value with the lowest final training loss; ties go to the earlier value.
    pub recommended: f64,
    pub run_dirs: Vec<PathBuf>,
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "sweep.json";

pub fn sweep_dir(out: &Path, axis: SweepAxis, value: f64) -> PathBuf {
    out.join(format!("{}={}", axis.name(), value))
}

/// One run per value, each in its own sub-directory of `out`. Refuses values that map to the
/// same directory and directories that already exist.
pub fn sweep(
    store: &Store,
    pool: &CandidatePool,
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    out: &Path,
) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut dirs = BTreeSet::new();
    let mut plan = Vec::with_capacity(values.len());
    for &v in values {
        let cfg = axis.apply(base, v)?;
        let dir = sweep_dir(out, axis, v);
        if !dirs.insert(dir.clone()) {
            return Err(Error::Config(format!("sweep value {v} repeats output directory {}", dir.display())));
        }
        if dir.exists() {
            return Err(Error::Config(format!("output directory {} already exists", dir.display())));
        }
        plan.push((v, cfg, dir));
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(base.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", base.workers)))?;
    let rows: Vec<SweepRow> = threads.install(|| {
        plan.par_iter()
            .map(|(v, cfg, dir)| {
                let cfg = RunConfig { workers: 1, ..cfg.clone() };
                let result = run(store, pool, &cfg)?;
                let metrics = evaluate(&result.state, store)?;
                write_run_outputs(dir, &result, &metrics)?;
                Ok(SweepRow {
                    value: *v,
                    base: metrics.base,
                    novel: metrics.novel,
                    hm: metrics.hm,
                    final_train_loss: result.trace.final_train_loss,
                })
            })
            .collect::<Result<_>>()
    })?;
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.final_train_loss < rows[best].final_train_loss {
            best = i;
        }
    }
    let summary = SweepSummary {
        axis,
        recommended: rows[best].value,
        rows,
        run_dirs: plan.into_iter().map(|p| p.2).collect(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &summary.rows {
        w.serialize(r).map_err(|e| Error::Format(format!("summary csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("summary csv: {e}")))?;
    fsio::write_atomic(&out.join(SUMMARY_FILE), &bytes)?;
    fsio::write_json(&out.join(SWEEP_FILE), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_basics() {
        assert_eq!(harmonic_mean(50.0, 50.0).unwrap(), 50.0);
        assert_eq!(harmonic_mean(100.0, 0.0).unwrap(), 0.0);
        assert!(matches!(harmonic_mean(0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(harmonic_mean(101.0, 5.0), Err(Error::Domain(_))));
    }

    #[test]
    fn config_invariants() {
        let ok = RunConfig::default();
        ok.validate().unwrap();
        let c = RunConfig { k: 3, interval: 10, epochs: 29, ..RunConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig { interval: 0, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { n: 5, m: 2, k: 3, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys_and_accepts_aliases() {
        let c: RunConfig = serde_json::from_str(r#"{"k":2,"t":5,"T":40}"#).unwrap();
        assert_eq!((c.k, c.interval, c.epochs), (2, 5, 40));
        assert!(serde_json::from_str::<RunConfig>(r#"{"kk":2}"#).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), RunConfig { seed: 1, ..RunConfig::default() }.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sweep_axis_rejects_fractional_counts() {
        assert!(SweepAxis::K.apply(&RunConfig::default(), 1.5).is_err());
        assert_eq!(SweepAxis::Lambda.apply(&RunConfig::default(), 0.2).unwrap().lambda, 0.2);
    }
}
