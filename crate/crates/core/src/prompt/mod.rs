//! Prompt layout, prompt state, the contrastive training loss and its analytic gradient.

pub mod checkpoint;
pub mod encoder;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use encoder::{Encoded, TextEncoder};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, log_sum_exp};
use crate::store::{EmbeddingTable, Store, TokenId};

/// One position of the prompt. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Soft(usize),
    Semantic(usize),
    Class,
}

/// `k` groups of `m` soft slots each followed by a semantic slot, then the
/// remaining `n - m*k` soft slots, then the class slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    n: usize,
    m: usize,
    k: usize,
    slots: Vec<Slot>,
}

impl PromptLayout {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }
}

impl fmt::Display for PromptLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .slots
            .iter()
            .map(|s| match s {
                Slot::Soft(i) => format!("S{}", i + 1),
                Slot::Semantic(j) => format!("Sem{}", j + 1),
                Slot::Class => "Class".to_string(),
            })
            .collect();
        write!(f, "[{}]", parts.join(","))
    }
}

pub fn build_layout(n: usize, m: usize, k: usize) -> Result<PromptLayout> {
    let needed = m
        .checked_mul(k)
        .ok_or_else(|| Error::Config(format!("m*k overflows for m={m}, k={k}")))?;
    if n < needed {
        return Err(Error::Config(format!("n={n} soft tokens cannot hold k={k} groups of m={m}")));
    }
    let mut slots = Vec::with_capacity(n + k + 1);
    let mut soft = 0;
    for j in 0..k {
        for _ in 0..m {
            slots.push(Slot::Soft(soft));
            soft += 1;
        }
        slots.push(Slot::Semantic(j));
    }
    while soft < n {
        slots.push(Slot::Soft(soft));
        soft += 1;
    }
    slots.push(Slot::Class);
    Ok(PromptLayout { n, m, k, slots })
}

/// Images, their labels as positions into `class_vecs`, and the class-slot vectors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_vecs: Vec<Vec<f64>>,
}

impl Batch {
    /// Builds a batch over `classes` from the given image rows of the store.
    pub fn from_store(store: &Store, classes: &[usize], image_indices: &[usize]) -> Result<Self> {
        let ds = store.dataset();
        let mut images = Vec::with_capacity(image_indices.len());
        let mut labels = Vec::with_capacity(image_indices.len());
        for &i in image_indices {
            let l = ds.labels[i];
            let pos = classes
                .iter()
                .position(|&c| c == l)
                .ok_or_else(|| Error::Precondition(format!("image {i} has label {l} outside the batch classes")))?;
            images.push(ds.images.row(i).to_vec());
            labels.push(pos);
        }
        let class_vecs = classes.iter().map(|&c| store.class_vector(c)).collect();
        Ok(Self { images, labels, class_vecs })
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Mean cross-entropy of `batch` when every class prompt shares `context`.
pub fn contrastive_loss(encoder: &TextEncoder, context: &[&[f64]], batch: &Batch, tau: f64) -> Result<f64> {
    Ok(loss_and_grad(encoder, context, batch, tau, false)?.0)
}

/// Loss and `dL/dx_s` for every context slot `s`.
pub fn contrastive_loss_grad(
    encoder: &TextEncoder,
    context: &[&[f64]],
    batch: &Batch,
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    loss_and_grad(encoder, context, batch, tau, true)
}

fn loss_and_grad(
    encoder: &TextEncoder,
    context: &[&[f64]],
    batch: &Batch,
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Precondition("loss over an empty batch".into()));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let dim = batch.images[0].len();
    let encoded: Vec<Encoded> = batch
        .class_vecs
        .iter()
        .map(|c| encoder.encode(c, context))
        .collect::<Result<_>>()?;
    let n = batch.images.len() as f64;
    let nc = encoded.len();
    let mut loss = 0.0;
    let mut g_y = if want_grad { vec![vec![0.0; dim]; nc] } else { Vec::new() };
    let mut logits = vec![0.0; nc];
    for (u, &label) in batch.images.iter().zip(&batch.labels) {
        for (z, e) in logits.iter_mut().zip(&encoded) {
            *z = dot(u, &e.y) / tau;
        }
        let lse = log_sum_exp(&logits);
        loss += lse - logits[label];
        if want_grad {
            for (j, g) in g_y.iter_mut().enumerate() {
                let p = (logits[j] - lse).exp();
                let coef = (p - f64::from(u8::from(j == label))) / (tau * n);
                axpy(coef, u, g);
            }
        }
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    let mut grads = Vec::new();
    if want_grad {
        grads = vec![vec![0.0; dim]; context.len()];
        for (j, e) in encoded.iter().enumerate() {
            encoder.backward(&batch.class_vecs[j], context, e, &g_y[j], |s, g| axpy(1.0, g, &mut grads[s]));
        }
    }
    Ok((loss, grads))
}

/// Percent of images whose highest-scoring class is the labelled one. Ties go to the lower class.
pub fn accuracy(encoder: &TextEncoder, context: &[&[f64]], batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Precondition("accuracy over an empty batch".into()));
    }
    let ys: Vec<Vec<f64>> = batch
        .class_vecs
        .iter()
        .map(|c| encoder.encode(c, context).map(|e| e.y))
        .collect::<Result<_>>()?;
    let mut correct = 0usize;
    for (u, &label) in batch.images.iter().zip(&batch.labels) {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (j, y) in ys.iter().enumerate() {
            let s = dot(u, y);
            if s > best_score {
                best_score = s;
                best = j;
            }
        }
        correct += usize::from(best == label);
    }
    Ok(100.0 * correct as f64 / batch.images.len() as f64)
}

/// Learnable soft rows plus frozen semantic slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    layout: PromptLayout,
    soft: EmbeddingTable,
    semantic: Vec<Option<TokenId>>,
    encoder: TextEncoder,
}

impl PromptState {
    /// Soft rows drawn from N(0, init_std^2) with a seeded generator.
    pub fn init(layout: PromptLayout, dim: usize, encoder: TextEncoder, init_std: f64, seed: u64) -> Result<Self> {
        if !(init_std >= 0.0 && init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be finite and non-negative, got {init_std}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..layout.n * dim)
            .map(|_| init_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let soft = EmbeddingTable::new(layout.n, dim, data)?;
        Self::with_soft(layout, soft, encoder)
    }

    pub fn with_soft(layout: PromptLayout, soft: EmbeddingTable, encoder: TextEncoder) -> Result<Self> {
        if soft.rows() != layout.n {
            return Err(Error::Format(format!("{} soft rows for a layout with n={}", soft.rows(), layout.n)));
        }
        encoder.validate()?;
        let semantic = vec![None; layout.k];
        Ok(Self { layout, soft, semantic, encoder })
    }

    pub fn layout(&self) -> &PromptLayout {
        &self.layout
    }
    pub fn soft(&self) -> &EmbeddingTable {
        &self.soft
    }
    pub fn semantic(&self) -> &[Option<TokenId>] {
        &self.semantic
    }
    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }
    pub fn dim(&self) -> usize {
        self.soft.dim()
    }

    /// Shared context vectors in layout order, skipping empty semantic slots and the class slot.
    pub fn context<'a>(&'a self, tokens: &'a EmbeddingTable) -> Result<Vec<&'a [f64]>> {
        let mut ctx = Vec::with_capacity(self.layout.slots.len());
        for slot in &self.layout.slots {
            match *slot {
                Slot::Soft(i) => ctx.push(self.soft.row(i)),
                Slot::Semantic(j) => {
                    if let Some(id) = self.semantic[j] {
                        ctx.push(tokens.get(id)?);
                    }
                }
                Slot::Class => {}
            }
        }
        Ok(ctx)
    }

    /// Positions in [`Self::context`] that hold soft rows, indexed by soft row.
    fn soft_positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.layout.n];
        let mut at = 0;
        for slot in &self.layout.slots {
            match *slot {
                Slot::Soft(i) => {
                    pos[i] = at;
                    at += 1;
                }
                Slot::Semantic(j) if self.semantic[j].is_some() => at += 1,
                _ => {}
            }
        }
        pos
    }

    /// Unit text embedding of the prompt for one class vector.
    pub fn encode_prompt(&self, tokens: &EmbeddingTable, class_vec: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encoder.encode(class_vec, &self.context(tokens)?)?.y)
    }

    pub fn fill_semantic_slot(mut self, j: usize, token: TokenId) -> Result<Self> {
        match self.semantic.get(j) {
            None => Err(Error::Precondition(format!("semantic slot {j} does not exist (k={})", self.layout.k))),
            Some(Some(existing)) => {
                Err(Error::State(format!("semantic slot {j} already holds token {existing}")))
            }
            Some(None) => {
                self.semantic[j] = Some(token);
                Ok(self)
            }
        }
    }

    pub fn training_loss(&self, tokens: &EmbeddingTable, batch: &Batch, tau: f64) -> Result<f64> {
        contrastive_loss(&self.encoder, &self.context(tokens)?, batch, tau)
    }

    /// Loss and gradient with respect to the soft rows. Semantic slots receive no gradient.
    pub fn loss_and_grad(&self, tokens: &EmbeddingTable, batch: &Batch, tau: f64) -> Result<(f64, EmbeddingTable)> {
        let ctx = self.context(tokens)?;
        let (loss, grads) = contrastive_loss_grad(&self.encoder, &ctx, batch, tau)?;
        let mut data = Vec::with_capacity(self.soft.data().len());
        for p in self.soft_positions() {
            data.extend_from_slice(&grads[p]);
        }
        Ok((loss, EmbeddingTable::new(self.layout.n, self.dim(), data)?))
    }

    pub fn grad_soft(&self, tokens: &EmbeddingTable, batch: &Batch, tau: f64) -> Result<EmbeddingTable> {
        Ok(self.loss_and_grad(tokens, batch, tau)?.1)
    }

    /// `soft -= alpha * grad`.
    pub fn sgd_step(mut self, grad: &EmbeddingTable, alpha: f64) -> Result<Self> {
        if grad.rows() != self.soft.rows() || grad.dim() != self.soft.dim() {
            return Err(Error::Format(format!(
                "gradient shape {}x{} does not match soft shape {}x{}",
                grad.rows(),
                grad.dim(),
                self.soft.rows(),
                self.soft.dim()
            )));
        }
        for i in 0..self.soft.rows() {
            axpy(-alpha, grad.row(i), self.soft.row_mut(i));
        }
        Ok(self)
    }

    pub(crate) fn from_parts(
        layout: PromptLayout,
        soft: EmbeddingTable,
        semantic: Vec<Option<TokenId>>,
        encoder: TextEncoder,
    ) -> Result<Self> {
        if semantic.len() != layout.k {
            return Err(Error::Format(format!("{} semantic ids for k={}", semantic.len(), layout.k)));
        }
        let mut s = Self::with_soft(layout, soft, encoder)?;
        s.semantic = semantic;
        Ok(s)
    }
}
