//! Interpretable prompt learning over frozen embeddings.
//!
//! A prompt is a sequence of learnable soft vectors with a few slots reserved for real
//! vocabulary tokens. The tokens are chosen greedily by how much they lower the
//! classification loss, minus a penalty for overlap with tokens already chosen. Selection is
//! interleaved with gradient training of the soft vectors.
//!
//! Modules, bottom up: [`store`] (embedding tables and datasets on disk), [`vocab`] (candidate
//! filtering), [`prompt`] (layout, encoder, loss and gradient), [`scorer`] (set objective),
//! [`selector`] (greedy and exact maximization), [`scheduler`] (the training loop) and [`cli`].

pub mod cli;
pub mod error;
pub mod fsio;
pub mod linalg;
pub mod prompt;
pub mod scheduler;
pub mod scorer;
pub mod selector;
pub mod store;
pub mod vocab;

pub use error::{Error, Result};
