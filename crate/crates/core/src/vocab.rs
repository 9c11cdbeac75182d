//! Candidate pool construction: filters raw vocabulary down to interpretable single-token words.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::VocabMeta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_length: usize,
    pub zipf_threshold: f64,
    pub require_lexicon: bool,
    pub max_pieces: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_length: 3, zipf_threshold: 3.5, require_lexicon: true, max_pieces: 1 }
    }
}

/// Counts per first failed criterion. `length` covers both the alphabetic and length checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub length: usize,
    pub lexicon: usize,
    pub zipf: usize,
    pub pieces: usize,
    pub duplicate: usize,
    pub kept: usize,
}

impl RejectionReport {
    pub fn total(&self) -> usize {
        self.length + self.lexicon + self.zipf + self.pieces + self.duplicate + self.kept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Length,
    Lexicon,
    Zipf,
    Pieces,
}

/// Surviving vocabulary entries, lowercased, in input order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    entries: Vec<VocabMeta>,
}

impl CandidatePool {
    pub fn from_entries(entries: Vec<VocabMeta>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.word.as_str()) {
                return Err(Error::Precondition(format!("word {:?} appears twice in the pool", e.word)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[VocabMeta] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.iter().any(|e| e.word == word)
    }

    pub fn get(&self, word: &str) -> Option<&VocabMeta> {
        self.entries.iter().find(|e| e.word == word)
    }

    /// Keeps the first `n` entries.
    pub fn truncated(&self, n: usize) -> Self {
        Self { entries: self.entries.iter().take(n).cloned().collect() }
    }
}

/// ASCII letters only.
pub fn is_alphabetic(word: &str) -> bool {
    !word.is_empty() && word.bytes().all(|b| b.is_ascii_alphabetic())
}

/// First criterion an entry fails, in filter order.
pub fn first_failure(entry: &VocabMeta, cfg: &FilterConfig) -> Option<Rejection> {
    let word = entry.word.to_lowercase();
    if !is_alphabetic(&word) || word.len() < cfg.min_length {
        Some(Rejection::Length)
    } else if cfg.require_lexicon && !entry.in_lexicon {
        Some(Rejection::Lexicon)
    } else if entry.zipf < cfg.zipf_threshold {
        Some(Rejection::Zipf)
    } else if entry.piece_count > cfg.max_pieces {
        Some(Rejection::Pieces)
    } else {
        None
    }
}

pub fn filter_vocab(raw: &[VocabMeta], cfg: &FilterConfig) -> (CandidatePool, RejectionReport) {
    let mut report = RejectionReport::default();
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for e in raw {
        match first_failure(e, cfg) {
            Some(Rejection::Length) => report.length += 1,
            Some(Rejection::Lexicon) => report.lexicon += 1,
            Some(Rejection::Zipf) => report.zipf += 1,
            Some(Rejection::Pieces) => report.pieces += 1,
            None => {
                let word = e.word.to_lowercase();
                if seen.insert(word.clone()) {
                    report.kept += 1;
                    entries.push(VocabMeta { word, ..e.clone() });
                } else {
                    report.duplicate += 1;
                }
            }
        }
    }
    (CandidatePool { entries }, report)
}

/// The pool without `word`. Fails with a not-found error when the word is absent.
pub fn pool_remove(pool: &CandidatePool, word: &str) -> Result<CandidatePool> {
    let pos = pool
        .entries
        .iter()
        .position(|e| e.word == word)
        .ok_or_else(|| Error::NotFound(format!("word {word:?} is not in the candidate pool")))?;
    let mut entries = pool.entries.clone();
    entries.remove(pos);
    Ok(CandidatePool { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(word: &str, zipf: f64, lex: bool, pieces: u32) -> VocabMeta {
        VocabMeta { word: word.into(), token_id: 0, zipf, in_lexicon: lex, piece_count: pieces }
    }

    #[test]
    fn threshold_boundaries() {
        let cfg = FilterConfig::default();
        assert_eq!(first_failure(&meta("cat", 3.5, true, 1), &cfg), None);
        assert_eq!(first_failure(&meta("ca", 9.0, true, 1), &cfg), Some(Rejection::Length));
        assert_eq!(first_failure(&meta("cat", 3.49, true, 1), &cfg), Some(Rejection::Zipf));
    }

    #[test]
    fn non_ascii_letters_are_not_alphabetic() {
        assert!(is_alphabetic("Cat"));
        assert!(!is_alphabetic("café"));
        assert!(!is_alphabetic("co-op"));
        assert!(!is_alphabetic(""));
    }

    #[test]
    fn first_failure_attribution_order() {
        let cfg = FilterConfig::default();
        // Fails everything: attributed to the first criterion.
        assert_eq!(first_failure(&meta("a1", 0.0, false, 4), &cfg), Some(Rejection::Length));
        assert_eq!(first_failure(&meta("dog", 0.0, false, 4), &cfg), Some(Rejection::Lexicon));
        assert_eq!(first_failure(&meta("dog", 0.0, true, 4), &cfg), Some(Rejection::Zipf));
    }

    #[test]
    fn lexicon_check_can_be_disabled() {
        let cfg = FilterConfig { require_lexicon: false, ..FilterConfig::default() };
        assert_eq!(first_failure(&meta("dog", 5.0, false, 1), &cfg), None);
    }

    #[test]
    fn lowercases_and_dedups() {
        let raw = vec![meta("Cat", 5.0, true, 1), meta("cat", 5.0, true, 1)];
        let (pool, rep) = filter_vocab(&raw, &FilterConfig::default());
        assert_eq!(pool.entries()[0].word, "cat");
        assert_eq!(rep.kept, 1);
        assert_eq!(rep.duplicate, 1);
    }

    #[test]
    fn remove_absent_word_is_not_found() {
        let (pool, _) = filter_vocab(&[meta("cat", 5.0, true, 1)], &FilterConfig::default());
        assert!(matches!(pool_remove(&pool, "dog"), Err(Error::NotFound(_))));
        let p = pool_remove(&pool, "cat").unwrap();
        assert!(p.is_empty());
    }

    proptest! {
        #[test]
        fn counts_partition_the_input(
            rows in prop::collection::vec(("[a-zA-Z0-9-]{0,6}", 0.0f64..8.0, any::<bool>(), 0u32..4), 0..60)
        ) {
            let raw: Vec<VocabMeta> = rows.iter().map(|(w, z, l, p)| meta(w, *z, *l, *p)).collect();
            let cfg = FilterConfig::default();
            let (pool, rep) = filter_vocab(&raw, &cfg);
            prop_assert_eq!(rep.total(), raw.len());
            prop_assert_eq!(rep.kept, pool.len());
            for e in pool.entries() {
                prop_assert!(is_alphabetic(&e.word) && e.word.len() >= 3);
                prop_assert!(e.in_lexicon && e.zipf >= 3.5 && e.piece_count <= 1);
            }
            // Idempotent.
            let (again, _) = filter_vocab(pool.entries(), &cfg);
            prop_assert_eq!(again, pool);
        }

        #[test]
        fn tighter_thresholds_never_keep_more(
            rows in prop::collection::vec(("[a-z]{1,6}", 0.0f64..8.0, any::<bool>(), 1u32..3), 0..60),
            z1 in 0.0f64..6.0, dz in 0.0f64..2.0
        ) {
            let raw: Vec<VocabMeta> = rows.iter().map(|(w, z, l, p)| meta(w, *z, *l, *p)).collect();
            let loose = FilterConfig { zipf_threshold: z1, ..FilterConfig::default() };
            let tight = FilterConfig { zipf_threshold: z1 + dz, min_length: 4, ..FilterConfig::default() };
            let (a, _) = filter_vocab(&raw, &loose);
            let (b, _) = filter_vocab(&raw, &tight);
            for e in b.entries() {
                prop_assert!(a.contains(&e.word));
            }
        }
    }
}
