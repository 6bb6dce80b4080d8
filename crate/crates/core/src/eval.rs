//! Ranking metrics: Recall@k, NDCG@k (binary relevance), and VDCG@k, which
//! rates each recommended item's semantic vicinity to the ground-truth item
//! on a 0-9 LLM scale and normalizes the discounted cumulative gain by a
//! synthetic ideal list [p, p/2, ..., p/2^(l-1)] with p = 8.

use std::collections::{BTreeMap, HashSet};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::catalog::{split_views, Dataset, ItemId, SplitConfig, UserId};
use crate::gateway::{parse_rating, Gateway, GatewayError, PromptKind};
use crate::pipeline::runfile::RunFile;

/// Fraction of target items present in the top-k.
pub fn recall_at_k(ranked: &[ItemId], targets: &[ItemId], k: usize) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let target_set: HashSet<ItemId> = targets.iter().copied().collect();
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| target_set.contains(i))
        .count();
    hits as f64 / target_set.len() as f64
}

fn discount(position_1based: usize) -> f64 {
    ((position_1based + 1) as f64).log2()
}

/// Binary-relevance NDCG: DCG over hit positions divided by the ideal DCG of
/// min(|targets|, k) leading hits.
pub fn ndcg_at_k(ranked: &[ItemId], targets: &[ItemId], k: usize) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let target_set: HashSet<ItemId> = targets.iter().copied().collect();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| target_set.contains(item))
        .map(|(pos, _)| 1.0 / discount(pos + 1))
        .sum();
    let ideal: f64 = (1..=target_set.len().min(k))
        .map(|pos| 1.0 / discount(pos))
        .sum();
    dcg / ideal
}

/// VDCG normalization constants. The ideal list has exactly `l` entries
/// [p, p/2, ..., p/2^(l-1)]; with ratings up to 9 > p = 8, uncapped values
/// can exceed 1, which `cap` clamps when set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VdcgParams {
    pub max_rating: u32,
    pub p: u32,
    pub l: usize,
    pub cap: bool,
}

impl VdcgParams {
    pub fn for_len(l: usize) -> Self {
        VdcgParams {
            max_rating: 9,
            p: 8,
            l,
            cap: false,
        }
    }
}

/// Core VDCG formula over already-collected ratings (one per list position).
pub fn vdcg_from_ratings(ratings: &[u32], params: &VdcgParams) -> f64 {
    assert_eq!(ratings.len(), params.l, "rating list must have length l");
    let dcg: f64 = ratings
        .iter()
        .enumerate()
        .map(|(pos, &r)| r as f64 / discount(pos + 1))
        .sum();
    let ideal: f64 = (0..params.l)
        .map(|i| (params.p as f64 / 2f64.powi(i as i32)) / discount(i + 1))
        .sum();
    let value = dcg / ideal;
    if params.cap {
        value.min(1.0)
    } else {
        value
    }
}

/// Concurrent (item, target) -> rating memo so repeated evaluation of the
/// same pairs is free and bit-identical.
#[derive(Debug, Default)]
pub struct RatingCache {
    map: Mutex<BTreeMap<(u32, u32), u32>>,
}

impl RatingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rates the top-k items against the ground-truth target via the gateway and
/// folds them into the VDCG formula. Unparseable replies rate 0; gateway
/// failures abort this user's value (the caller counts the skip).
pub fn vdcg_at_k(
    gateway: &Gateway,
    ranked: &[ItemId],
    target: ItemId,
    catalog: &crate::catalog::Catalog,
    k: usize,
    params: &VdcgParams,
    cache: &RatingCache,
) -> Result<f64, GatewayError> {
    assert_eq!(k, params.l, "cutoff must equal the ideal list length");
    let mut ratings = Vec::with_capacity(k);
    for &item in ranked.iter().take(k) {
        ratings.push(rate_pair(gateway, item, target, catalog, cache)?);
    }
    // Lists shorter than k (tiny catalogs) contribute zero-rated tail slots.
    ratings.resize(k, 0);
    Ok(vdcg_from_ratings(&ratings, params))
}

fn rate_pair(
    gateway: &Gateway,
    item: ItemId,
    target: ItemId,
    catalog: &crate::catalog::Catalog,
    cache: &RatingCache,
) -> Result<u32, GatewayError> {
    if let Some(&hit) = cache.map.lock().unwrap().get(&(item.0, target.0)) {
        return Ok(hit);
    }
    let reply = gateway.request(
        PromptKind::VdcgRate,
        &[
            ("candidate", catalog.description(item)),
            ("target", catalog.description(target)),
        ],
    )?;
    let rating = parse_rating(&reply).unwrap_or(0);
    cache.map.lock().unwrap().insert((item.0, target.0), rating);
    Ok(rating)
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub vdcg_cutoffs: Vec<usize>,
    pub vdcg: bool,
    pub vdcg_cap: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: vec![10, 20],
            vdcg_cutoffs: vec![5, 10],
            vdcg: false,
            vdcg_cap: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub cutoff: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserMetricRow {
    pub user_key: String,
    pub metric: String,
    pub cutoff: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub per_user: Vec<UserMetricRow>,
    pub users_evaluated: usize,
    /// Users dropped from VDCG aggregation due to gateway failures.
    pub vdcg_skipped: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalReport {
    /// `metric,cutoff,value` rows in deterministic order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,cutoff,value\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{:.6}\n", row.metric, row.cutoff, row.value));
        }
        out
    }

    pub fn per_user_csv(&self) -> String {
        let mut out = String::from("user_id,metric,cutoff,value\n");
        for row in &self.per_user {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                row.user_key, row.metric, row.cutoff, row.value
            ));
        }
        out
    }

    pub fn value(&self, metric: &str, cutoff: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.cutoff == cutoff)
            .map(|r| r.value)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no users evaluated: run file is empty")]
    NoUsersEvaluated,
    #[error("run file references unknown user id {user}")]
    UnknownUser { user: u32 },
    #[error("run file references unknown item id {item}")]
    UnknownItem { item: u32 },
}

/// Aggregates per-user metrics over a run file. VDCG is computed only when a
/// gateway is supplied and enabled in the config; per-user gateway failures
/// skip that user's VDCG (counted), never the whole evaluation.
pub fn evaluate_run(
    run: &RunFile,
    dataset: &Dataset,
    split: &SplitConfig,
    cfg: &EvalConfig,
    gateway: Option<&Gateway>,
) -> Result<EvalReport, EvalError> {
    if run.rankings.is_empty() {
        return Err(EvalError::NoUsersEvaluated);
    }
    let mut report = EvalReport {
        config_hash: run.config_hash.clone(),
        seed: run.seed,
        ..Default::default()
    };

    let mut per_user_rankings: Vec<(UserId, Vec<ItemId>, Vec<ItemId>)> = Vec::new();
    for ranking in &run.rankings {
        let user = UserId(ranking.user);
        if user.index() >= dataset.users.len() {
            return Err(EvalError::UnknownUser { user: ranking.user });
        }
        let items: Vec<ItemId> = ranking
            .items
            .iter()
            .map(|&(item, _)| {
                let id = ItemId(item);
                if dataset.catalog.contains(id) {
                    Ok(id)
                } else {
                    Err(EvalError::UnknownItem { item })
                }
            })
            .collect::<Result<_, _>>()?;
        let targets = split_views(dataset.sequence(user), split).target.to_vec();
        per_user_rankings.push((user, items, targets));
    }
    report.users_evaluated = per_user_rankings.len();

    for &cutoff in &cfg.cutoffs {
        // Parallel per user; the ordered collect keeps output deterministic.
        let values: Vec<(f64, f64)> = per_user_rankings
            .par_iter()
            .map(|(_, items, targets)| {
                (
                    recall_at_k(items, targets, cutoff),
                    ndcg_at_k(items, targets, cutoff),
                )
            })
            .collect();
        let mut recall_sum = 0.0;
        let mut ndcg_sum = 0.0;
        for ((user, _, _), &(recall, ndcg)) in per_user_rankings.iter().zip(&values) {
            recall_sum += recall;
            ndcg_sum += ndcg;
            let key = dataset.users.external_key(*user).to_string();
            report.per_user.push(UserMetricRow {
                user_key: key.clone(),
                metric: "recall".into(),
                cutoff,
                value: recall,
            });
            report.per_user.push(UserMetricRow {
                user_key: key,
                metric: "ndcg".into(),
                cutoff,
                value: ndcg,
            });
        }
        let n = per_user_rankings.len() as f64;
        report.rows.push(MetricRow {
            metric: "recall".into(),
            cutoff,
            value: recall_sum / n,
        });
        report.rows.push(MetricRow {
            metric: "ndcg".into(),
            cutoff,
            value: ndcg_sum / n,
        });
    }

    if cfg.vdcg {
        if let Some(gateway) = gateway {
            let cache = RatingCache::new();
            for &cutoff in &cfg.vdcg_cutoffs {
                let params = VdcgParams {
                    cap: cfg.vdcg_cap,
                    ..VdcgParams::for_len(cutoff)
                };
                let mut sum = 0.0;
                let mut counted = 0usize;
                for (user, items, targets) in &per_user_rankings {
                    // Rated against the first held-out target.
                    let Some(&target) = targets.first() else {
                        continue;
                    };
                    match vdcg_at_k(
                        gateway,
                        items,
                        target,
                        &dataset.catalog,
                        cutoff,
                        &params,
                        &cache,
                    ) {
                        Ok(value) => {
                            sum += value;
                            counted += 1;
                            report.per_user.push(UserMetricRow {
                                user_key: dataset.users.external_key(*user).to_string(),
                                metric: "vdcg".into(),
                                cutoff,
                                value,
                            });
                        }
                        Err(e) => {
                            log::warn!("vdcg skipped for user {user}: {e}");
                            report.vdcg_skipped += 1;
                        }
                    }
                }
                if counted > 0 {
                    report.rows.push(MetricRow {
                        metric: "vdcg".into(),
                        cutoff,
                        value: sum / counted as f64,
                    });
                }
            }
        }
    }
    Ok(report)
}
