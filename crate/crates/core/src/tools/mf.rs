//! Matrix-factorization tool: user/item embeddings trained with a pairwise
//! hinge loss over sampled negatives.
//!
//! Negative pairs are sampled once up front (seeded) and reused every epoch,
//! so the per-epoch loss is measured against a fixed objective and training
//! is bit-reproducible for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::ToolError;
use crate::catalog::{ItemId, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfHyperparams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_negatives")]
    pub negatives: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_dim() -> usize {
    16
}
fn default_epochs() -> usize {
    30
}
fn default_lr() -> f64 {
    0.05
}
fn default_lr_decay() -> f64 {
    0.95
}
fn default_negatives() -> usize {
    4
}
fn default_margin() -> f64 {
    1.0
}

impl Default for MfHyperparams {
    fn default() -> Self {
        MfHyperparams {
            dim: 16,
            epochs: 30,
            learning_rate: 0.05,
            lr_decay: 0.95,
            negatives: 4,
            margin: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MfModel {
    n_users: usize,
    n_items: usize,
    dim: usize,
    seed: u64,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    popularity: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

impl MfModel {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn train(
        prefixes: &[&[ItemId]],
        n_items: usize,
        hyper: &MfHyperparams,
        seed: u64,
    ) -> Result<Self, ToolError> {
        let n_users = prefixes.len();
        let dim = hyper.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut user_factors = vec![0.0; n_users * dim];
        let mut item_factors = vec![0.0; n_items * dim];
        for f in user_factors.iter_mut().chain(item_factors.iter_mut()) {
            *f = rng.gen_range(-0.1..0.1);
        }

        let mut popularity = vec![0.0; n_items];
        for prefix in prefixes {
            for item in *prefix {
                popularity[item.index()] += 1.0;
            }
        }

        // Fixed (user, positive, negative) pairs for the whole run.
        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        for (u, prefix) in prefixes.iter().enumerate() {
            let seen: HashSet<usize> = prefix.iter().map(|i| i.index()).collect();
            if seen.len() >= n_items {
                continue; // no negatives to sample
            }
            for pos in *prefix {
                for _ in 0..hyper.negatives {
                    let neg = loop {
                        let cand = rng.gen_range(0..n_items);
                        if !seen.contains(&cand) {
                            break cand;
                        }
                    };
                    pairs.push((u, pos.index(), neg));
                }
            }
        }

        let mut lr = hyper.learning_rate;
        let mut epoch_losses = Vec::with_capacity(hyper.epochs);
        for epoch in 0..hyper.epochs {
            for &(u, pos, neg) in &pairs {
                let us = u * dim;
                let (ps, ns) = (pos * dim, neg * dim);
                let mut s = 0.0;
                for d in 0..dim {
                    s += user_factors[us + d]
                        * (item_factors[ps + d] - item_factors[ns + d]);
                }
                if hyper.margin - s > 0.0 {
                    for d in 0..dim {
                        let uf = user_factors[us + d];
                        let diff = item_factors[ps + d] - item_factors[ns + d];
                        user_factors[us + d] += lr * diff;
                        item_factors[ps + d] += lr * uf;
                        item_factors[ns + d] -= lr * uf;
                    }
                }
            }
            // Evaluate the epoch on the fixed pair set after its updates.
            let mut loss = 0.0;
            for &(u, pos, neg) in &pairs {
                let us = u * dim;
                let (ps, ns) = (pos * dim, neg * dim);
                let mut s = 0.0;
                for d in 0..dim {
                    s += user_factors[us + d]
                        * (item_factors[ps + d] - item_factors[ns + d]);
                }
                loss += (hyper.margin - s).max(0.0);
            }
            let mean = if pairs.is_empty() {
                0.0
            } else {
                loss / pairs.len() as f64
            };
            if !mean.is_finite() {
                return Err(ToolError::Diverged { epoch });
            }
            epoch_losses.push(mean);
            lr *= hyper.lr_decay;
        }

        Ok(MfModel {
            n_users,
            n_items,
            dim,
            seed,
            user_factors,
            item_factors,
            popularity,
            epoch_losses,
        })
    }

    /// Raw scores for every item; users outside the training set fall back
    /// to popularity counts (flagged via the second element).
    pub fn scores(&self, user: UserId) -> (Vec<f64>, bool) {
        if user.index() >= self.n_users {
            return (self.popularity.clone(), true);
        }
        let us = user.index() * self.dim;
        let scores = (0..self.n_items)
            .map(|i| {
                let is = i * self.dim;
                (0..self.dim)
                    .map(|d| self.user_factors[us + d] * self.item_factors[is + d])
                    .sum()
            })
            .collect();
        (scores, false)
    }
}
