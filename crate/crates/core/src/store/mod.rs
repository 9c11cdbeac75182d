//! Embedding store: token and image tables, dataset labels and splits, and vocabulary metadata.
//!
//! On disk a store is a directory holding `manifest.json`, one matrix file per table and
//! `vocab.tsv`. Values are kept as `f64` in memory and as `f32` on disk.

pub mod matrix;
pub mod synth;
pub mod vocab_tsv;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::linalg;

/// Dense row index into the `tokens` table.
pub type TokenId = u32;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const TOKENS: &str = "tokens";
pub const IMAGES: &str = "images";

const NORM_TOL: f64 = 1e-6;
const ZERO_TOL: f64 = 1e-12;

/// Row-major `rows x dim` matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Format(format!(
                "table shape {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Format(format!("row {i} has length {}, expected {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Resolves a token id to its row, failing with an integrity error when out of range.
    pub fn get(&self, id: TokenId) -> Result<&[f64]> {
        let i = id as usize;
        if i >= self.rows {
            return Err(Error::Integrity(format!("token id {id} is not in a table of {} rows", self.rows)));
        }
        Ok(self.row(i))
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    /// Copy with every row scaled to unit L2 norm. Zero rows are an integrity error.
    pub fn normalized(&self, name: &str) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..out.rows {
            let n = linalg::normalize(out.row_mut(i));
            if n < ZERO_TOL {
                return Err(Error::Integrity(format!("table {name}: row {i} is a zero vector")));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabMeta {
    pub word: String,
    pub token_id: TokenId,
    pub zipf: f64,
    pub in_lexicon: bool,
    pub piece_count: u32,
}

/// Everything needed to build a [`Store`]; validated by [`Store::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoreParts {
    pub dim: usize,
    pub tables: BTreeMap<String, EmbeddingTable>,
    pub normalized: BTreeMap<String, bool>,
    pub vocab: Vec<VocabMeta>,
    pub labels: Vec<usize>,
    pub class_tokens: Vec<Vec<TokenId>>,
    pub base_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    pub test_images: Option<Vec<usize>>,
    pub tau: Option<f64>,
}

/// Labelled images with per-image L2 normalization applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: EmbeddingTable,
    pub labels: Vec<usize>,
    pub class_tokens: Vec<Vec<TokenId>>,
    pub base_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    test_mask: Option<Vec<bool>>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_tokens.len()
    }

    fn select(&self, classes: &[usize], want_test: bool) -> Vec<usize> {
        let wanted: BTreeSet<usize> = classes.iter().copied().collect();
        (0..self.labels.len())
            .filter(|&i| wanted.contains(&self.labels[i]))
            .filter(|&i| match &self.test_mask {
                Some(mask) => mask[i] == want_test,
                None => true,
            })
            .collect()
    }

    /// Training image indices whose label is in `classes`. Without a held-out split every image counts.
    pub fn train_indices(&self, classes: &[usize]) -> Vec<usize> {
        self.select(classes, false)
    }

    /// Evaluation image indices whose label is in `classes`. Without a held-out split every image counts.
    pub fn test_indices(&self, classes: &[usize]) -> Vec<usize> {
        self.select(classes, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    parts: StoreParts,
    dataset: Dataset,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    tables: BTreeMap<String, String>,
    labels: Vec<usize>,
    class_tokens: Vec<Vec<TokenId>>,
    base_classes: Vec<usize>,
    novel_classes: Vec<usize>,
    vocab: String,
    normalized: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    test_images: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
}

fn check_unique(ids: &[usize], what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &i in ids {
        if !seen.insert(i) {
            return Err(Error::Integrity(format!("{what} lists {i} twice")));
        }
    }
    Ok(())
}

impl Store {
    pub fn new(parts: StoreParts) -> Result<Self> {
        if parts.dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        for name in [TOKENS, IMAGES] {
            if !parts.tables.contains_key(name) {
                return Err(Error::Integrity(format!("required table {name:?} is missing")));
            }
        }
        for (name, t) in &parts.tables {
            if t.dim() != parts.dim {
                return Err(Error::Format(format!(
                    "table {name} has dim {} but the store dim is {}",
                    t.dim(),
                    parts.dim
                )));
            }
        }
        for name in parts.normalized.keys() {
            if !parts.tables.contains_key(name) {
                return Err(Error::Integrity(format!("normalized flag given for unknown table {name:?}")));
            }
        }
        for (name, t) in &parts.tables {
            if parts.normalized.get(name).copied().unwrap_or(false) {
                for (i, r) in t.iter_rows().enumerate() {
                    let n = linalg::norm(r);
                    if (n - 1.0).abs() > NORM_TOL {
                        return Err(Error::Integrity(format!(
                            "table {name} is flagged normalized but row {i} has norm {n}"
                        )));
                    }
                }
            }
        }

        let tokens = &parts.tables[TOKENS];
        let images = &parts.tables[IMAGES];
        if parts.labels.len() != images.rows() {
            return Err(Error::Format(format!(
                "{} labels for {} images",
                parts.labels.len(),
                images.rows()
            )));
        }
        let num_classes = parts.class_tokens.len();
        for (i, &l) in parts.labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::Integrity(format!(
                    "image {i} has label {l} but only {num_classes} classes exist"
                )));
            }
        }
        let check_token = |id: TokenId, what: String| -> Result<()> {
            let row = tokens.get(id).map_err(|_| {
                Error::Integrity(format!("{what} references token id {id}, which is not in the tokens table"))
            })?;
            if linalg::norm(row) < ZERO_TOL {
                return Err(Error::Integrity(format!("{what} references token id {id}, a zero vector")));
            }
            Ok(())
        };
        for (c, ids) in parts.class_tokens.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::Integrity(format!("class {c} has no class-name tokens")));
            }
            for &id in ids {
                check_token(id, format!("class {c}"))?;
            }
        }
        for v in &parts.vocab {
            check_token(v.token_id, format!("vocab word {:?}", v.word))?;
        }

        check_unique(&parts.base_classes, "base_classes")?;
        check_unique(&parts.novel_classes, "novel_classes")?;
        for &c in parts.base_classes.iter().chain(&parts.novel_classes) {
            if c >= num_classes {
                return Err(Error::Integrity(format!("split references class {c} of {num_classes}")));
            }
        }
        let base: BTreeSet<_> = parts.base_classes.iter().collect();
        if let Some(c) = parts.novel_classes.iter().find(|c| base.contains(c)) {
            return Err(Error::Integrity(format!("class {c} is both base and novel")));
        }
        let mut counts = vec![0usize; num_classes];
        for &l in &parts.labels {
            counts[l] += 1;
        }
        for &c in parts.base_classes.iter().chain(&parts.novel_classes) {
            if counts[c] == 0 {
                return Err(Error::Integrity(format!("class {c} has no images")));
            }
        }

        let test_mask = match &parts.test_images {
            None => None,
            Some(idx) => {
                check_unique(idx, "test_images")?;
                let mut mask = vec![false; images.rows()];
                for &i in idx {
                    if i >= images.rows() {
                        return Err(Error::Integrity(format!("test image {i} of {}", images.rows())));
                    }
                    mask[i] = true;
                }
                Some(mask)
            }
        };

        let dataset = Dataset {
            images: images.normalized(IMAGES)?,
            labels: parts.labels.clone(),
            class_tokens: parts.class_tokens.clone(),
            base_classes: parts.base_classes.clone(),
            novel_classes: parts.novel_classes.clone(),
            test_mask,
        };
        Ok(Self { parts, dataset })
    }

    pub fn dim(&self) -> usize {
        self.parts.dim
    }

    pub fn parts(&self) -> &StoreParts {
        &self.parts
    }

    pub fn into_parts(self) -> StoreParts {
        self.parts
    }

    pub fn tokens(&self) -> &EmbeddingTable {
        &self.parts.tables[TOKENS]
    }

    pub fn table(&self, name: &str) -> Option<&EmbeddingTable> {
        self.parts.tables.get(name)
    }

    pub fn vocab(&self) -> &[VocabMeta] {
        &self.parts.vocab
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn tau(&self) -> Option<f64> {
        self.parts.tau
    }

    /// Looks up a vocabulary entry by exact word.
    pub fn word(&self, word: &str) -> Option<&VocabMeta> {
        self.parts.vocab.iter().find(|v| v.word == word)
    }

    /// Mean of the class-name token embeddings of class `c`.
    pub fn class_vector(&self, c: usize) -> Vec<f64> {
        let toks = self.tokens();
        linalg::mean_rows(
            self.dataset.class_tokens[c].iter().map(|&id| toks.row(id as usize)),
            self.dim(),
        )
    }
}

pub fn load_store(dir: &Path) -> Result<Store> {
    let manifest: Manifest = fsio::read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    let mut tables = BTreeMap::new();
    for (name, file) in &manifest.tables {
        tables.insert(name.clone(), matrix::read(&dir.join(file))?);
    }
    let vocab_path = dir.join(&manifest.vocab);
    let vocab = vocab_tsv::parse(&fsio::read_to_string(&vocab_path)?, &vocab_path.display().to_string())?;
    Store::new(StoreParts {
        dim: manifest.dim,
        tables,
        normalized: manifest.normalized,
        vocab,
        labels: manifest.labels,
        class_tokens: manifest.class_tokens,
        base_classes: manifest.base_classes,
        novel_classes: manifest.novel_classes,
        test_images: manifest.test_images,
        tau: manifest.tau,
    })
}

/// Writes the store as `manifest.json`, `<table>.bin` per table and `vocab.tsv`.
pub fn save_store(store: &Store, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = &store.parts;
    let mut files = BTreeMap::new();
    for (name, table) in &p.tables {
        let file = format!("{name}.bin");
        matrix::write(&dir.join(&file), table)?;
        files.insert(name.clone(), file);
    }
    fsio::write_atomic(&dir.join("vocab.tsv"), vocab_tsv::render(&p.vocab).as_bytes())?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        dim: p.dim,
        tables: files,
        labels: p.labels.clone(),
        class_tokens: p.class_tokens.clone(),
        base_classes: p.base_classes.clone(),
        novel_classes: p.novel_classes.clone(),
        vocab: "vocab.tsv".into(),
        normalized: p.normalized.clone(),
        test_images: p.test_images.clone(),
        tau: p.tau,
    };
    fsio::write_json(&dir.join(MANIFEST_FILE), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_parts() -> StoreParts {
        let tokens = EmbeddingTable::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
        let images = EmbeddingTable::new(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        StoreParts {
            dim: 2,
            tables: BTreeMap::from([(TOKENS.to_string(), tokens), (IMAGES.to_string(), images)]),
            normalized: BTreeMap::from([(TOKENS.to_string(), false), (IMAGES.to_string(), false)]),
            vocab: vec![VocabMeta {
                word: "both".into(),
                token_id: 2,
                zipf: 4.0,
                in_lexicon: true,
                piece_count: 1,
            }],
            labels: vec![0, 1],
            class_tokens: vec![vec![0], vec![1]],
            base_classes: vec![0],
            novel_classes: vec![1],
            test_images: None,
            tau: None,
        }
    }

    #[test]
    fn images_are_normalized_at_load() {
        let s = Store::new(tiny_parts()).unwrap();
        assert_eq!(s.dataset().images.row(0), &[1.0, 0.0]);
        assert_eq!(s.dataset().images.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn dangling_class_token_names_the_id() {
        let mut p = tiny_parts();
        p.class_tokens[1] = vec![99];
        let err = Store::new(p).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        assert!(err.to_string().contains("99"), "{err}");
    }

    #[test]
    fn zero_token_row_rejected() {
        let mut p = tiny_parts();
        p.tables.get_mut(TOKENS).unwrap().row_mut(2).fill(0.0);
        assert!(matches!(Store::new(p), Err(Error::Integrity(_))));
    }

    #[test]
    fn normalized_flag_is_checked() {
        let mut p = tiny_parts();
        p.normalized.insert(IMAGES.into(), true);
        assert!(matches!(Store::new(p), Err(Error::Integrity(_))));
    }

    #[test]
    fn overlapping_split_rejected() {
        let mut p = tiny_parts();
        p.novel_classes = vec![0];
        assert!(matches!(Store::new(p), Err(Error::Integrity(_))));
    }

    #[test]
    fn dim_mismatch_is_format_error() {
        let mut p = tiny_parts();
        p.dim = 3;
        assert!(matches!(Store::new(p), Err(Error::Format(_))));
    }

    #[test]
    fn split_indices() {
        let mut p = tiny_parts();
        p.labels = vec![0, 0];
        p.novel_classes = vec![];
        p.test_images = Some(vec![1]);
        let s = Store::new(p).unwrap();
        assert_eq!(s.dataset().train_indices(&[0]), vec![0]);
        assert_eq!(s.dataset().test_indices(&[0]), vec![1]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::new(tiny_parts()).unwrap();
        save_store(&s, dir.path()).unwrap();
        assert_eq!(load_store(dir.path()).unwrap(), s);
    }

    #[test]
    fn missing_file_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::new(tiny_parts()).unwrap();
        save_store(&s, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("images.bin")).unwrap();
        let err = load_store(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("images.bin"), "{err}");
    }
}
