//! Sequential tool: first-order item-to-item transition counts with
//! recency-exponential smoothing. The transition observed last in a prefix
//! carries weight 1; each step further back is discounted by `decay`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::catalog::ItemId;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionModel {
    n_items: usize,
    decay: f64,
    /// from-item -> (to-item -> accumulated weight)
    weights: BTreeMap<u32, BTreeMap<u32, f64>>,
    popularity: Vec<f64>,
}

impl TransitionModel {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn train(prefixes: &[&[ItemId]], n_items: usize, decay: f64) -> Self {
        let mut weights: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();
        let mut popularity = vec![0.0; n_items];
        for prefix in prefixes {
            let m = prefix.len();
            for item in *prefix {
                popularity[item.index()] += 1.0;
            }
            for j in 0..m.saturating_sub(1) {
                let w = decay.powi((m - 2 - j) as i32);
                *weights
                    .entry(prefix[j].0)
                    .or_default()
                    .entry(prefix[j + 1].0)
                    .or_insert(0.0) += w;
            }
        }
        TransitionModel {
            n_items,
            decay,
            weights,
            popularity,
        }
    }

    /// Scores successors of the last history item; items with no observed
    /// transition get 0. A last item with no outgoing transitions at all
    /// falls back to popularity counts (flagged).
    pub fn scores(&self, history: &[ItemId]) -> (Vec<f64>, bool) {
        let last = match history.last() {
            Some(item) => item.0,
            None => return (self.popularity.clone(), true),
        };
        match self.weights.get(&last) {
            Some(row) if !row.is_empty() => {
                let mut scores = vec![0.0; self.n_items];
                for (&to, &w) in row {
                    scores[to as usize] = w;
                }
                (scores, false)
            }
            _ => (self.popularity.clone(), true),
        }
    }
}
