//! Graph tool: two-hop co-visitation propagation. A candidate item scores by
//! the number of user->item->user->item paths connecting it to the query
//! history, so items outside the history's co-visitation component score 0.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::catalog::ItemId;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoVisitModel {
    n_items: usize,
    /// Deduplicated, sorted train items per user.
    user_items: Vec<Vec<u32>>,
    /// Inverted index: item -> users who consumed it.
    item_users: Vec<Vec<u32>>,
}

impl CoVisitModel {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn train(prefixes: &[&[ItemId]], n_items: usize) -> Self {
        let user_items: Vec<Vec<u32>> = prefixes
            .iter()
            .map(|p| {
                p.iter()
                    .map(|i| i.0)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect();
        let mut item_users = vec![Vec::new(); n_items];
        for (u, items) in user_items.iter().enumerate() {
            for &i in items {
                item_users[i as usize].push(u as u32);
            }
        }
        CoVisitModel {
            n_items,
            user_items,
            item_users,
        }
    }

    pub fn scores(&self, history: &[ItemId]) -> Vec<f64> {
        let hist: BTreeSet<u32> = history.iter().map(|i| i.0).collect();
        let mut sim = vec![0.0f64; self.user_items.len()];
        for &item in &hist {
            if (item as usize) < self.item_users.len() {
                for &v in &self.item_users[item as usize] {
                    sim[v as usize] += 1.0;
                }
            }
        }
        let mut scores = vec![0.0; self.n_items];
        for (v, &s) in sim.iter().enumerate() {
            if s > 0.0 {
                for &i in &self.user_items[v] {
                    scores[i as usize] += s;
                }
            }
        }
        scores
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().map(|&i| ItemId(i)).collect()
    }

    #[test]
    fn disjoint_cliques_score_zero_across() {
        // Clique 1: users 0-1 over items 0-2; clique 2: users 2-3 over items 3-5.
        let seqs = vec![
            ids(&[0, 1, 2]),
            ids(&[1, 2, 0]),
            ids(&[3, 4, 5]),
            ids(&[4, 5, 3]),
        ];
        let prefixes: Vec<&[ItemId]> = seqs.iter().map(|v| v.as_slice()).collect();
        let model = CoVisitModel::train(&prefixes, 6);
        let scores = model.scores(&ids(&[0, 1]));
        assert!(scores[..3].iter().all(|&s| s > 0.0));
        assert_eq!(&scores[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn overlap_weighting() {
        // User 1 shares two items with the query, user 2 shares one. Item 4
        // (only user 1) must outscore item 5 (only user 2).
        let seqs = vec![ids(&[0, 1, 4]), ids(&[0, 5])];
        let prefixes: Vec<&[ItemId]> = seqs.iter().map(|v| v.as_slice()).collect();
        let model = CoVisitModel::train(&prefixes, 6);
        let scores = model.scores(&ids(&[0, 1]));
        assert!(scores[4] > scores[5]);
    }
}
