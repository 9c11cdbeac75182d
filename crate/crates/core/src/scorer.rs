//! Set-function objective over semantic tokens: classification utility minus a redundancy penalty.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cosine;
use crate::prompt::{contrastive_loss, Batch, PromptState, TextEncoder};
use crate::store::{EmbeddingTable, Store, TokenId};

pub const CLS_MARKER: &str = "[CLS]";
pub const INSERT_MARKER: &str = "[...]";
pub use crate::store::synth::DEFAULT_TEMPLATE;

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Selection prompt: template words before and after the insertion marker, resolved to token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTemplate {
    pub text: String,
    pub prefix: Vec<TokenId>,
    pub suffix: Vec<TokenId>,
}

/// Parses a template with exactly one `[CLS]` and one `[...]`. Every other word must be in
/// the store vocabulary; `,` `:` and `.` are stripped.
pub fn parse_template(text: &str, store: &Store) -> Result<SelectionTemplate> {
    for marker in [CLS_MARKER, INSERT_MARKER] {
        let count = text.matches(marker).count();
        if count != 1 {
            return Err(Error::Config(format!("template {text:?} must contain {marker} exactly once, found {count}")));
        }
    }
    let mut prefix = Vec::new();
    let mut suffix = Vec::new();
    let mut after = false;
    for raw in text.split_whitespace() {
        if raw.contains(INSERT_MARKER) {
            after = true;
            continue;
        }
        if raw.contains(CLS_MARKER) {
            continue;
        }
        let word = raw.trim_matches(|c: char| c == ',' || c == ':' || c == '.').to_lowercase();
        if word.is_empty() {
            continue;
        }
        let meta = store
            .word(&word)
            .ok_or_else(|| Error::Integrity(format!("template word {word:?} is not in the vocabulary")))?;
        if after { &mut suffix } else { &mut prefix }.push(meta.token_id);
    }
    Ok(SelectionTemplate { text: text.to_string(), prefix, suffix })
}

/// Marginal effect of adding one token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub gain: f64,
    pub delta_utility: f64,
    pub delta_redundancy: f64,
}

/// Scoring context: a fixed batch, temperature, encoder and the base prompt into which
/// selected tokens are inserted. `L(empty)` is computed once at construction.
pub struct ScorerContext<'a> {
    tokens: &'a EmbeddingTable,
    batch: Batch,
    tau: f64,
    encoder: TextEncoder,
    prefix: Vec<Vec<f64>>,
    suffix: Vec<Vec<f64>>,
    empty_loss: f64,
}

impl<'a> ScorerContext<'a> {
    pub fn new(
        tokens: &'a EmbeddingTable,
        batch: Batch,
        tau: f64,
        encoder: TextEncoder,
        prefix: Vec<Vec<f64>>,
        suffix: Vec<Vec<f64>>,
    ) -> Result<Self> {
        encoder.validate()?;
        let mut ctx = Self { tokens, batch, tau, encoder, prefix, suffix, empty_loss: 0.0 };
        ctx.empty_loss = ctx.cross_entropy(&[])?;
        Ok(ctx)
    }

    /// Context built from a selection template.
    pub fn from_template(
        store: &'a Store,
        template: &SelectionTemplate,
        batch: Batch,
        tau: f64,
        encoder: TextEncoder,
    ) -> Result<Self> {
        let t = store.tokens();
        let rows = |ids: &[TokenId]| -> Result<Vec<Vec<f64>>> { ids.iter().map(|&i| t.get(i).map(<[f64]>::to_vec)).collect() };
        Self::new(t, batch, tau, encoder, rows(&template.prefix)?, rows(&template.suffix)?)
    }

    /// Context built from the soft rows of a trained prompt, with selected tokens appended.
    /// Semantic slots already filled in `state` are ignored; pass them as the selected set.
    pub fn from_state(store: &'a Store, state: &PromptState, batch: Batch, tau: f64) -> Result<Self> {
        let prefix = state.soft().iter_rows().map(<[f64]>::to_vec).collect();
        Self::new(store.tokens(), batch, tau, *state.encoder(), prefix, Vec::new())
    }

    pub fn tokens(&self) -> &EmbeddingTable {
        self.tokens
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn empty_loss(&self) -> f64 {
        self.empty_loss
    }

    /// Mean cross-entropy over the batch with `selected` inserted in order.
    pub fn cross_entropy(&self, selected: &[TokenId]) -> Result<f64> {
        let mut ctx: Vec<&[f64]> = Vec::with_capacity(self.prefix.len() + selected.len() + self.suffix.len());
        ctx.extend(self.prefix.iter().map(Vec::as_slice));
        for &id in selected {
            ctx.push(self.tokens.get(id)?);
        }
        ctx.extend(self.suffix.iter().map(Vec::as_slice));
        contrastive_loss(&self.encoder, &ctx, &self.batch, self.tau)
    }

    pub fn utility(&self, selected: &[TokenId]) -> Result<f64> {
        Ok(self.empty_loss - self.cross_entropy(selected)?)
    }
}

/// Sum of pairwise cosine similarities over unordered pairs.
pub fn redundancy(tokens: &EmbeddingTable, selected: &[TokenId]) -> Result<f64> {
    let rows: Vec<&[f64]> = selected.iter().map(|&i| tokens.get(i)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for j in 1..rows.len() {
        for i in 0..j {
            total += cosine(rows[i], rows[j]);
        }
    }
    Ok(total)
}

pub fn objective(ctx: &ScorerContext<'_>, lambda: f64, selected: &[TokenId]) -> Result<f64> {
    Ok(ctx.utility(selected)? - lambda * redundancy(ctx.tokens, selected)?)
}

pub fn marginal_gain(ctx: &ScorerContext<'_>, lambda: f64, selected: &[TokenId], candidate: TokenId) -> Result<Gain> {
    if selected.contains(&candidate) {
        return Err(Error::Precondition(format!("token {candidate} is already selected")));
    }
    let mut with = selected.to_vec();
    with.push(candidate);
    let delta_utility = ctx.cross_entropy(selected)? - ctx.cross_entropy(&with)?;
    let e = ctx.tokens.get(candidate)?;
    let mut delta_redundancy = 0.0;
    for &id in selected {
        delta_redundancy += cosine(ctx.tokens.get(id)?, e);
    }
    Ok(Gain { gain: delta_utility - lambda * delta_redundancy, delta_utility, delta_redundancy })
}

/// A seeded subset of `fraction` of `indices` (at least one), returned in ascending order.
pub fn subsample(indices: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("selection_subsample must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(indices.to_vec());
    }
    let take = ((indices.len() as f64 * fraction).ceil() as usize).clamp(1, indices.len().max(1));
    let mut v = indices.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v.truncate(take);
    v.sort_unstable();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.0, 0.0]);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        let p = softmax(&[1000.0, 1000.0, 1000.0]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn subsample_is_seeded_and_sized() {
        let idx: Vec<usize> = (0..10).collect();
        let a = subsample(&idx, 0.35, 1).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, subsample(&idx, 0.35, 1).unwrap());
        assert_eq!(subsample(&idx, 1.0, 1).unwrap(), idx);
        assert!(subsample(&idx, 0.0, 1).is_err());
    }

    #[test]
    fn redundancy_of_pair_is_cosine() {
        let t = EmbeddingTable::new(3, 2, vec![1.0, 0.0, 1.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(redundancy(&t, &[0]).unwrap(), 0.0);
        let r = redundancy(&t, &[0, 1]).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
        let r3 = redundancy(&t, &[0, 1, 2]).unwrap();
        assert!((r3 - 2.0 * 0.5f64.sqrt()).abs() < 1e-15);
    }
}
