//! `prompt.json`: layout parameters, semantic token ids and the soft matrix as a hex-encoded
//! matrix file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_layout, PromptState, TextEncoder};
use crate::error::{Error, Result};
use crate::fsio;
use crate::store::{matrix, TokenId};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptCheckpoint {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub dim: usize,
    pub encoder: TextEncoder,
    pub semantic: Vec<Option<TokenId>>,
    /// Hex of the soft matrix in the store's binary matrix format.
    pub soft: String,
}

impl PromptCheckpoint {
    pub fn from_state(state: &PromptState) -> Self {
        let l = state.layout();
        Self {
            version: CHECKPOINT_VERSION,
            n: l.n(),
            m: l.m(),
            k: l.k(),
            dim: state.dim(),
            encoder: *state.encoder(),
            semantic: state.semantic().to_vec(),
            soft: hex::encode(matrix::encode(state.soft())),
        }
    }

    pub fn to_state(&self) -> Result<PromptState> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", self.version)));
        }
        let bytes = hex::decode(&self.soft).map_err(|e| Error::Format(format!("checkpoint soft payload: {e}")))?;
        let soft = matrix::decode(&bytes, "checkpoint soft matrix")?;
        if soft.dim() != self.dim {
            return Err(Error::Format(format!("soft matrix dim {} but checkpoint dim {}", soft.dim(), self.dim)));
        }
        let layout = build_layout(self.n, self.m, self.k)?;
        PromptState::from_parts(layout, soft, self.semantic.clone(), self.encoder)
    }
}

pub fn save_checkpoint(state: &PromptState, path: &Path) -> Result<()> {
    fsio::write_json(path, &PromptCheckpoint::from_state(state))
}

pub fn load_checkpoint(path: &Path) -> Result<PromptState> {
    fsio::read_json::<PromptCheckpoint>(path)?.to_state()
}
