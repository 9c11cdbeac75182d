//! Set functions the greedy selector can maximize.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scorer::{marginal_gain, objective, Gain, ScorerContext};
use crate::store::TokenId;

/// A set function over token ids. `gain` defaults to the difference of two `value` calls;
/// its breakdown reports the whole difference as utility.
pub trait SetFunction: Sync {
    fn value(&self, set: &[TokenId]) -> Result<f64>;

    fn gain(&self, set: &[TokenId], candidate: TokenId) -> Result<Gain> {
        if set.contains(&candidate) {
            return Err(Error::Precondition(format!("token {candidate} is already in the set")));
        }
        let mut with = set.to_vec();
        with.push(candidate);
        let g = self.value(&with)? - self.value(set)?;
        Ok(Gain { gain: g, delta_utility: g, delta_redundancy: 0.0 })
    }
}

/// The selection objective: utility minus `lambda` times redundancy.
pub struct ObjectiveOracle<'c, 'a> {
    pub ctx: &'c ScorerContext<'a>,
    pub lambda: f64,
}

impl SetFunction for ObjectiveOracle<'_, '_> {
    fn value(&self, set: &[TokenId]) -> Result<f64> {
        objective(self.ctx, self.lambda, set)
    }

    fn gain(&self, set: &[TokenId], candidate: TokenId) -> Result<Gain> {
        marginal_gain(self.ctx, self.lambda, set, candidate)
    }
}

/// `f(S) = sum of weights`.
#[derive(Debug, Clone)]
pub struct ModularOracle {
    pub weights: BTreeMap<TokenId, f64>,
}

impl SetFunction for ModularOracle {
    fn value(&self, set: &[TokenId]) -> Result<f64> {
        set.iter()
            .map(|id| {
                self.weights
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::NotFound(format!("token {id} has no weight")))
            })
            .sum()
    }
}

/// `f(S) = sum_i max_{e in S} sim[i][e]`, with `f(empty) = 0`. Monotone submodular for
/// non-negative similarities.
#[derive(Debug, Clone)]
pub struct FacilityLocationOracle {
    /// `sim[i][e]`: similarity of client `i` to element `e` (indexed by token id).
    pub sim: Vec<Vec<f64>>,
}

impl SetFunction for FacilityLocationOracle {
    fn value(&self, set: &[TokenId]) -> Result<f64> {
        let mut total = 0.0;
        for row in &self.sim {
            let mut best = 0.0f64;
            for &e in set {
                let s = *row
                    .get(e as usize)
                    .ok_or_else(|| Error::NotFound(format!("token {e} is not a facility")))?;
                best = best.max(s);
            }
            total += best;
        }
        Ok(total)
    }
}
