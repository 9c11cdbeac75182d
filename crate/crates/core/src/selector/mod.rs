//! Greedy selection of semantic tokens, an exact brute-force reference, and diagnostics.

pub mod oracles;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use oracles::{FacilityLocationOracle, ModularOracle, ObjectiveOracle, SetFunction};

use crate::error::{Error, Result};
use crate::scorer::Gain;
use crate::store::TokenId;
use crate::vocab::{pool_remove, CandidatePool};

pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub chosen: String,
    pub token_id: TokenId,
    pub gain: f64,
    pub delta_utility: f64,
    pub delta_redundancy: f64,
    pub pool_size_before: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GreedyConfig {
    /// Candidates scored concurrently. Results do not depend on this value.
    pub workers: usize,
    /// Reuse stale gains as upper bounds and re-score only the current leader.
    pub lazy: bool,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { workers: 1, lazy: false }
    }
}

fn score_all(
    pool: &CandidatePool,
    selected: &[TokenId],
    oracle: &dyn SetFunction,
    workers: usize,
) -> Result<Vec<Gain>> {
    let entries = pool.entries();
    if workers <= 1 {
        return entries.iter().map(|e| oracle.gain(selected, e.token_id)).collect();
    }
    let tp = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    tp.install(|| entries.par_iter().map(|e| oracle.gain(selected, e.token_id)).collect())
}

/// True when `(g, word)` beats `(best_g, best_word)`: higher gain, ties to the smaller word.
fn better(g: f64, word: &str, best: Option<(f64, &str)>) -> bool {
    match best {
        None => true,
        Some((bg, bw)) => g > bg || (g == bg && word < bw),
    }
}

fn step_from(pool: &CandidatePool, i: usize, g: Gain) -> SelectionStep {
    let e = &pool.entries()[i];
    SelectionStep {
        chosen: e.word.clone(),
        token_id: e.token_id,
        gain: g.gain,
        delta_utility: g.delta_utility,
        delta_redundancy: g.delta_redundancy,
        pool_size_before: pool.len(),
    }
}

fn pick_best(pool: &CandidatePool, gains: &[Gain]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, g) in gains.iter().enumerate() {
        if !g.gain.is_finite() {
            return Err(Error::Numeric(format!("gain of {:?} is {}", pool.entries()[i].word, g.gain)));
        }
        let cur = best.map(|b| (gains[b].gain, pool.entries()[b].word.as_str()));
        if better(g.gain, &pool.entries()[i].word, cur) {
            best = Some(i);
        }
    }
    Ok(best.expect("non-empty pool"))
}

/// Scores every candidate and returns the best. Ties go to the lexicographically smallest word.
pub fn greedy_step(
    pool: &CandidatePool,
    selected: &[TokenId],
    oracle: &dyn SetFunction,
    cfg: &GreedyConfig,
) -> Result<SelectionStep> {
    if pool.is_empty() {
        return Err(Error::State("candidate pool is empty".into()));
    }
    let gains = score_all(pool, selected, oracle, cfg.workers)?;
    let b = pick_best(pool, &gains)?;
    Ok(step_from(pool, b, gains[b]))
}

/// Lazy greedy state: stale gains act as upper bounds. Exact for submodular objectives and a
/// heuristic otherwise.
#[derive(Debug, Default, Clone)]
pub struct LazyGreedy {
    bounds: BTreeMap<String, f64>,
}

impl LazyGreedy {
    pub fn step(
        &mut self,
        pool: &CandidatePool,
        selected: &[TokenId],
        oracle: &dyn SetFunction,
        cfg: &GreedyConfig,
    ) -> Result<SelectionStep> {
        if pool.is_empty() {
            return Err(Error::State("candidate pool is empty".into()));
        }
        if self.bounds.is_empty() {
            let gains = score_all(pool, selected, oracle, cfg.workers)?;
            let b = pick_best(pool, &gains)?;
            for (e, g) in pool.entries().iter().zip(&gains) {
                self.bounds.insert(e.word.clone(), g.gain);
            }
            let step = step_from(pool, b, gains[b]);
            self.bounds.remove(&step.chosen);
            return Ok(step);
        }
        let index: BTreeMap<&str, usize> = pool.entries().iter().enumerate().map(|(i, e)| (e.word.as_str(), i)).collect();
        let mut fresh: BTreeMap<String, Gain> = BTreeMap::new();
        loop {
            let mut leader: Option<(f64, &str)> = None;
            for e in pool.entries() {
                let b = match fresh.get(&e.word) {
                    Some(g) => g.gain,
                    None => *self.bounds.get(&e.word).unwrap_or(&f64::INFINITY),
                };
                if better(b, &e.word, leader) {
                    leader = Some((b, e.word.as_str()));
                }
            }
            let (_, word) = leader.unwrap();
            let word = word.to_string();
            if let Some(g) = fresh.get(&word).copied() {
                self.bounds.remove(&word);
                for (w, g) in &fresh {
                    if *w != word {
                        self.bounds.insert(w.clone(), g.gain);
                    }
                }
                return Ok(step_from(pool, index[word.as_str()], g));
            }
            let g = oracle.gain(selected, pool.entries()[index[word.as_str()]].token_id)?;
            fresh.insert(word, g);
        }
    }
}

/// Runs `k` greedy steps, removing each choice from the pool and calling `hook` after each.
pub fn greedy_select(
    pool: &CandidatePool,
    k: usize,
    oracle: &dyn SetFunction,
    cfg: &GreedyConfig,
    mut hook: impl FnMut(&SelectionStep) -> Result<()>,
) -> Result<Vec<SelectionStep>> {
    if k > pool.len() {
        return Err(Error::Config(format!("k={k} exceeds the pool size {}", pool.len())));
    }
    let mut pool = pool.clone();
    let mut selected = Vec::with_capacity(k);
    let mut steps = Vec::with_capacity(k);
    let mut lazy = LazyGreedy::default();
    for _ in 0..k {
        let step = if cfg.lazy {
            lazy.step(&pool, &selected, oracle, cfg)?
        } else {
            greedy_step(&pool, &selected, oracle, cfg)?
        };
        pool = pool_remove(&pool, &step.chosen)?;
        selected.push(step.token_id);
        hook(&step)?;
        steps.push(step);
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    /// Sorted words of the best subset.
    pub words: Vec<String>,
    pub token_ids: Vec<TokenId>,
    pub value: f64,
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact maximizer over all subsets of size at most `k`. Ties go to the lexicographically
/// smallest sorted word list.
pub fn brute_force_best(pool: &CandidatePool, k: usize, oracle: &dyn SetFunction) -> Result<BruteForceResult> {
    let n = pool.len();
    let k = k.min(n);
    if binomial(n, k) > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(format!("C({n},{k}) exceeds {BRUTE_FORCE_LIMIT}")));
    }
    let mut entries: Vec<_> = pool.entries().iter().collect();
    entries.sort_by(|a, b| a.word.cmp(&b.word));
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut cur: Vec<usize> = Vec::with_capacity(k);

    fn visit(
        start: usize,
        k: usize,
        cur: &mut Vec<usize>,
        entries: &[&crate::store::VocabMeta],
        oracle: &dyn SetFunction,
        best: &mut Option<(f64, Vec<usize>)>,
    ) -> Result<()> {
        let ids: Vec<TokenId> = cur.iter().map(|&i| entries[i].token_id).collect();
        let v = oracle.value(&ids)?;
        let replace = match best {
            None => true,
            // Index order equals word order, so comparing index lists compares word lists.
            Some((bv, bset)) => v > *bv || (v == *bv && cur.as_slice() < bset.as_slice()),
        };
        if replace {
            *best = Some((v, cur.clone()));
        }
        if cur.len() == k {
            return Ok(());
        }
        for i in start..entries.len() {
            cur.push(i);
            visit(i + 1, k, cur, entries, oracle, best)?;
            cur.pop();
        }
        Ok(())
    }

    visit(0, k, &mut cur, &entries, oracle, &mut best)?;
    let (value, idx) = best.unwrap();
    Ok(BruteForceResult {
        words: idx.iter().map(|&i| entries[i].word.clone()).collect(),
        token_ids: idx.iter().map(|&i| entries[i].token_id).collect(),
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve {
    pub gains: Vec<f64>,
    /// Least-squares slope of gain against step number; absent with fewer than two steps.
    pub slope: Option<f64>,
}

pub fn marginal_curve(steps: &[SelectionStep]) -> MarginalCurve {
    let gains: Vec<f64> = steps.iter().map(|s| s.gain).collect();
    let slope = if gains.len() < 2 {
        None
    } else {
        let n = gains.len() as f64;
        let mx = (n + 1.0) / 2.0;
        let my = gains.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, g) in gains.iter().enumerate() {
            let dx = (i + 1) as f64 - mx;
            sxy += dx * (g - my);
            sxx += dx * dx;
        }
        Some(sxy / sxx)
    };
    MarginalCurve { gains, slope }
}

/// Lower bound on the distance of `oracle` from submodularity, from `samples` random chains
/// `A ⊆ B`, `v ∉ B`.
///
/// A diminishing-returns violation `V = (f(B+v) - f(B)) - (f(A+v) - f(A)) > 0` certifies that
/// any submodular `F` with `|f - F| <= eps |F|` has `eps >= V / (V + S)`, where `S` is the sum of
/// `|f|` over the four sets. Returns the largest such bound, or 0 when no violation is seen.
pub fn epsilon_estimate(
    oracle: &dyn SetFunction,
    pool: &CandidatePool,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let ids: Vec<TokenId> = pool.entries().iter().map(|e| e.token_id).collect();
    if ids.is_empty() {
        return Err(Error::Precondition("epsilon estimate needs a non-empty pool".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        let v = shuffled[0];
        let b_size = rng.random_range(0..ids.len());
        let b: Vec<TokenId> = shuffled[1..=b_size].to_vec();
        let a: Vec<TokenId> = b.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        let with = |s: &[TokenId]| {
            let mut w = s.to_vec();
            w.push(v);
            w
        };
        let fa = oracle.value(&a)?;
        let fav = oracle.value(&with(&a))?;
        let fb = oracle.value(&b)?;
        let fbv = oracle.value(&with(&b))?;
        let scale = fa.abs() + fav.abs() + fb.abs() + fbv.abs();
        let violation = (fbv - fb) - (fav - fa);
        if violation > 1e-12 * scale.max(1.0) {
            worst = worst.max(violation / (violation + scale));
        }
    }
    Ok(worst)
}
