//! Seeded synthetic stores with planted attribute directions.
//!
//! Each class has a prototype (a shared domain direction plus a class offset) and a fixed set
//! of attributes. Images are noisy mixtures of prototype and attributes. Class text embeddings
//! carry the attributes only weakly, so a token aligned with an attribute carries information
//! the class text lacks. The candidate vocabulary holds one token per attribute (planted), an
//! optional copy of one planted token, and random distractors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, Store, StoreParts, TokenId, VocabMeta, IMAGES, TOKENS};
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_TEMPLATE: &str = "a photo of a [CLS], with emphasis on: [...]";

const PLANTED_WORDS: &[&str] = &[
    "striped", "spotted", "furry", "winged", "scaly", "metallic", "glossy", "feathered", "horned",
    "woolly", "wooden", "rusty",
];

const DISTRACTOR_WORDS: &[&str] = &[
    "table", "river", "window", "garden", "pencil", "bottle", "ladder", "candle", "carpet",
    "basket", "mirror", "pillow", "rocket", "saddle", "tunnel", "violin", "wallet", "anchor",
    "barrel", "bucket", "cactus", "dagger", "engine", "falcon", "goblet", "hammer", "island",
    "jacket", "kettle", "lantern", "magnet", "napkin", "orchid", "parrot", "quiver", "ribbon",
    "shovel", "trophy", "umbrella", "velvet",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub classes: usize,
    /// The first `base_classes` classes form the base split, the rest are novel.
    pub base_classes: usize,
    pub planted: usize,
    pub distractors: usize,
    /// Adds a copy of the planted token used by the most base classes.
    pub duplicate_planted: bool,
    pub attributes_per_class: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Length of each class offset from the shared domain direction.
    pub class_separation: f64,
    /// Weight of attributes in image vectors.
    pub attribute_strength: f64,
    /// Weight of attributes in class text vectors.
    pub text_attribute_weight: f64,
    /// Expected L2 norm of the isotropic image noise.
    pub noise: f64,
    /// Draw prototype, offset and attribute directions as an orthonormal set.
    pub orthogonal: bool,
    pub template: String,
    pub template_word_norm: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            classes: 10,
            base_classes: 5,
            planted: 6,
            distractors: 40,
            duplicate_planted: true,
            attributes_per_class: 2,
            train_per_class: 8,
            test_per_class: 40,
            class_separation: 0.15,
            attribute_strength: 1.0,
            text_attribute_weight: 0.2,
            noise: 4.5,
            orthogonal: true,
            template: DEFAULT_TEMPLATE.to_string(),
            template_word_norm: 0.3,
        }
    }
}

/// Ground truth retained alongside a generated store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub planted_words: Vec<String>,
    /// `(copy, original)` when a duplicate was planted.
    pub duplicate: Option<(String, String)>,
    pub distractor_words: Vec<String>,
    /// Attribute indices of each class.
    pub class_attributes: Vec<Vec<usize>>,
}

pub struct SynthWorld {
    pub store: Store,
    pub truth: SynthTruth,
}

/// Words of a template other than the `[CLS]` and `[...]` markers, lowercased, punctuation stripped.
pub fn template_words(template: &str) -> Vec<String> {
    template
        .split_whitespace()
        .filter(|w| !w.starts_with("[CLS]") && !w.starts_with("[...]"))
        .map(|w| w.trim_matches(|c: char| c == ',' || c == ':' || c == '.').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        if linalg::normalize(&mut v) > 1e-9 {
            return v;
        }
    }
}

/// `count` orthonormal directions from Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let p = linalg::dot(&v, b);
                linalg::axpy(-p, b, &mut v);
            }
        }
        if linalg::normalize(&mut v) > 1e-6 {
            basis.push(v);
        }
    }
    basis
}

fn quantize(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| *x as f32 as f64).collect()
}

fn distractor_word(i: usize) -> String {
    if let Some(w) = DISTRACTOR_WORDS.get(i) {
        return w.to_string();
    }
    let mut n = i - DISTRACTOR_WORDS.len();
    let mut s = String::from("zz");
    loop {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s
}

fn planted_word(i: usize) -> String {
    match PLANTED_WORDS.get(i) {
        Some(w) => w.to_string(),
        None => format!("attribute{}", distractor_word(i)),
    }
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let bad = |m: String| Err(Error::Config(m));
    if cfg.dim == 0 || cfg.classes == 0 {
        return bad("dim and classes must be positive".into());
    }
    if cfg.base_classes > cfg.classes {
        return bad(format!("base_classes {} exceeds classes {}", cfg.base_classes, cfg.classes));
    }
    if cfg.attributes_per_class > cfg.planted {
        return bad(format!(
            "attributes_per_class {} exceeds planted {}",
            cfg.attributes_per_class, cfg.planted
        ));
    }
    if binomial(cfg.planted, cfg.attributes_per_class) < cfg.classes {
        return bad(format!(
            "{} planted attributes give fewer than {} distinct attribute sets of size {}",
            cfg.planted, cfg.classes, cfg.attributes_per_class
        ));
    }
    if cfg.train_per_class == 0 {
        return bad("train_per_class must be positive".into());
    }
    if cfg.duplicate_planted && cfg.planted == 0 {
        return bad("duplicate_planted needs at least one planted token".into());
    }
    let needed = cfg.classes + cfg.planted + 1;
    if cfg.orthogonal && cfg.dim < needed {
        return bad(format!(
            "orthogonal prototypes need dim >= classes + planted + 1 = {needed}, got {}",
            cfg.dim
        ));
    }
    for (name, v) in [
        ("class_separation", cfg.class_separation),
        ("attribute_strength", cfg.attribute_strength),
        ("text_attribute_weight", cfg.text_attribute_weight),
        ("noise", cfg.noise),
        ("template_word_norm", cfg.template_word_norm),
    ] {
        if !v.is_finite() || v < 0.0 {
            return bad(format!("{name} must be finite and non-negative"));
        }
    }
    Ok(())
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Store> {
    Ok(generate_world(cfg, seed)?.store)
}

pub fn generate_world(cfg: &SynthConfig, seed: u64) -> Result<SynthWorld> {
    validate(cfg)?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (domain, offsets, attrs) = if cfg.orthogonal {
        let mut b = orthonormal(&mut rng, d, cfg.classes + cfg.planted + 1);
        let attrs = b.split_off(cfg.classes + 1);
        let offsets = b.split_off(1);
        (b.pop().unwrap(), offsets, attrs)
    } else {
        let domain = unit(&mut rng, d);
        let offsets = (0..cfg.classes).map(|_| unit(&mut rng, d)).collect();
        let attrs = (0..cfg.planted).map(|_| unit(&mut rng, d)).collect();
        (domain, offsets, attrs)
    };
    let prototypes: Vec<Vec<f64>> = offsets
        .iter()
        .map(|o| {
            let mut p = domain.clone();
            linalg::axpy(cfg.class_separation, o, &mut p);
            p
        })
        .collect();

    let mut combos = combinations(cfg.planted, cfg.attributes_per_class);
    combos.shuffle(&mut rng);
    let class_attributes: Vec<Vec<usize>> = combos.into_iter().take(cfg.classes).collect();

    let mix = |base: &[f64], w: f64, c: usize| {
        let mut v = base.to_vec();
        for &a in &class_attributes[c] {
            linalg::axpy(w, &attrs[a], &mut v);
        }
        v
    };

    let mut image_rows = Vec::new();
    let mut labels = Vec::new();
    let mut test_images = Vec::new();
    let sigma = cfg.noise / (d as f64).sqrt();
    for (count, is_test) in [(cfg.train_per_class, false), (cfg.test_per_class, true)] {
        for (c, proto) in prototypes.iter().enumerate() {
            for _ in 0..count {
                let mut u = mix(proto, cfg.attribute_strength, c);
                if sigma > 0.0 {
                    linalg::axpy(sigma, &gaussian(&mut rng, d), &mut u);
                }
                if linalg::normalize(&mut u) < 1e-12 {
                    return Err(Error::Numeric("synthetic image collapsed to zero".into()));
                }
                if is_test {
                    test_images.push(image_rows.len());
                }
                image_rows.push(quantize(&u));
                labels.push(c);
            }
        }
    }

    let distractors: Vec<Vec<f64>> = (0..cfg.distractors).map(|_| unit(&mut rng, d)).collect();
    let tmpl_words = {
        let mut seen = Vec::<String>::new();
        for w in template_words(&cfg.template) {
            if !seen.contains(&w) {
                seen.push(w);
            }
        }
        seen
    };

    let mut token_rows: Vec<Vec<f64>> = Vec::new();
    let mut vocab: Vec<VocabMeta> = Vec::new();
    let mut push = |word: String, row: Vec<f64>, zipf: f64, in_lexicon: bool| -> TokenId {
        let id = token_rows.len() as TokenId;
        token_rows.push(quantize(&row));
        vocab.push(VocabMeta { word, token_id: id, zipf, in_lexicon, piece_count: 1 });
        id
    };

    for w in &tmpl_words {
        let mut v = unit(&mut rng, d);
        linalg::scale(&mut v, cfg.template_word_norm);
        push(w.clone(), v, 7.0, false);
    }
    let mut class_tokens = Vec::new();
    for (c, proto) in prototypes.iter().enumerate() {
        let mut t = mix(proto, cfg.text_attribute_weight, c);
        linalg::normalize(&mut t);
        class_tokens.push(vec![push(format!("class_{c:02}"), t, 5.0, false)]);
    }
    let zipf = |rng: &mut ChaCha8Rng| ((3.6 + 2.4 * rng.random::<f64>()) as f32) as f64;
    let planted_words: Vec<String> = (0..cfg.planted).map(planted_word).collect();
    for (a, w) in planted_words.iter().enumerate() {
        let z = zipf(&mut rng);
        push(w.clone(), attrs[a].clone(), z, true);
    }
    let duplicate = if cfg.duplicate_planted {
        let mut usage = vec![0usize; cfg.planted];
        for attrs_of in &class_attributes[..cfg.base_classes] {
            for &a in attrs_of {
                usage[a] += 1;
            }
        }
        let best = (0..cfg.planted).max_by_key(|&a| (usage[a], std::cmp::Reverse(a))).unwrap();
        let copy = format!("{}ish", planted_words[best]);
        let z = zipf(&mut rng);
        push(copy.clone(), attrs[best].clone(), z, true);
        Some((copy, planted_words[best].clone()))
    } else {
        None
    };
    let distractor_words: Vec<String> = (0..cfg.distractors).map(distractor_word).collect();
    for (w, v) in distractor_words.iter().zip(distractors) {
        let z = zipf(&mut rng);
        push(w.clone(), v, z, true);
    }

    let tables = BTreeMap::from([
        (TOKENS.to_string(), EmbeddingTable::from_rows(&token_rows, d)?),
        (IMAGES.to_string(), EmbeddingTable::from_rows(&image_rows, d)?),
    ]);
    let normalized = BTreeMap::from([(TOKENS.to_string(), false), (IMAGES.to_string(), true)]);
    let store = Store::new(StoreParts {
        dim: d,
        tables,
        normalized,
        vocab,
        labels,
        class_tokens,
        base_classes: (0..cfg.base_classes).collect(),
        novel_classes: (cfg.base_classes..cfg.classes).collect(),
        test_images: if cfg.test_per_class > 0 { Some(test_images) } else { None },
        tau: None,
    })?;
    Ok(SynthWorld {
        store,
        truth: SynthTruth { planted_words, duplicate, distractor_words, class_attributes },
    })
}
