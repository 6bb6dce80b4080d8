//! Inference path: aggregate tool scores by tool-memory weights, rerank the
//! top candidates with the LLM against substitutes, complements, and the
//! user profile, filter hallucinated ids, and fuse the lists by intent
//! weights into the final ranking.
//!
//! Every stage degrades to identity instead of aborting: an empty target
//! list skips its LLM call, an unparseable or failed rerank keeps the
//! aggregated order, and the hallucination filter guarantees the output is
//! always a permutation of the candidate set.

use std::collections::BTreeMap;

use crate::agent::AgentState;
use crate::catalog::{split_views, BehaviorSequence, Catalog, ItemId, SplitConfig};
use crate::gateway::{parse_id_list, templates, Gateway, PromptKind};
use crate::tools::{top_k, ScoreVector, ToolSet};

/// An ordered permutation of the candidate set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RerankedList {
    pub items: Vec<ItemId>,
}

/// Position-weighted fusion result: lower score ranks earlier. `order`
/// applies the tie rules (first-list position, then item id).
#[derive(Clone, Debug, PartialEq)]
pub struct FusedRanking {
    pub scores: BTreeMap<ItemId, f64>,
    pub order: Vec<ItemId>,
}

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("expected {expected} score vectors, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("score vectors cover different item counts")]
    ItemCountMismatch,
    #[error("fuse inputs are not permutations of the same candidate set")]
    CandidateSetMismatch,
}

/// Weighted sum of normalized per-tool score vectors.
pub fn aggregate(weights: &[f64], per_tool: &[ScoreVector]) -> Result<ScoreVector, RerankError> {
    if weights.len() != per_tool.len() {
        return Err(RerankError::LengthMismatch {
            expected: weights.len(),
            got: per_tool.len(),
        });
    }
    let first = per_tool.first().ok_or(RerankError::LengthMismatch {
        expected: 1,
        got: 0,
    })?;
    let n = first.len();
    if per_tool.iter().any(|v| v.len() != n) {
        return Err(RerankError::ItemCountMismatch);
    }
    let mut scores = vec![0.0; n];
    for (weight, vector) in weights.iter().zip(per_tool) {
        for (acc, s) in scores.iter_mut().zip(&vector.scores) {
            *acc += weight * s;
        }
    }
    Ok(ScoreVector::new(usize::MAX, first.user, scores))
}

/// Keeps LLM-output tokens that resolve to ids inside the candidate set
/// (first occurrence only, LLM order), then appends the remaining candidates
/// in their original order. Tokens are matched both as dense ids (as printed
/// in prompts) and as external catalog keys. Total: the result is always a
/// permutation of `candidates`.
pub fn hallucination_filter(
    raw_tokens: &[String],
    candidates: &[ItemId],
    catalog: &Catalog,
) -> RerankedList {
    let mut remaining: Vec<ItemId> = candidates.to_vec();
    let mut items: Vec<ItemId> = Vec::with_capacity(candidates.len());
    for token in raw_tokens {
        let resolved = resolve_token(token, catalog);
        if let Some(id) = resolved {
            if let Some(pos) = remaining.iter().position(|&c| c == id) {
                remaining.remove(pos);
                items.push(id);
            }
        }
    }
    items.extend(remaining);
    RerankedList { items }
}

fn resolve_token(token: &str, catalog: &Catalog) -> Option<ItemId> {
    if let Ok(raw) = token.trim().parse::<u32>() {
        let id = ItemId(raw);
        if catalog.contains(id) {
            return Some(id);
        }
    }
    catalog.resolve_key(token.trim())
}

fn candidate_block(candidates: &[ItemId], catalog: &Catalog) -> String {
    let pairs: Vec<(String, String)> = candidates
        .iter()
        .map(|&id| (id.to_string(), catalog.description(id).to_string()))
        .collect();
    templates::candidate_lines(&pairs)
}

/// One LLM rerank of `candidates` by similarity to `target_titles`. An empty
/// target list skips the call; gateway errors keep the aggregated order.
pub fn rerank_similarity(
    gateway: &Gateway,
    candidates: &[ItemId],
    catalog: &Catalog,
    target_titles: &[String],
) -> RerankedList {
    if target_titles.is_empty() {
        return RerankedList {
            items: candidates.to_vec(),
        };
    }
    let block = candidate_block(candidates, catalog);
    let targets = target_titles.join("\n");
    let length = candidates.len().to_string();
    match gateway.request(
        PromptKind::SimilarityRerank,
        &[
            ("length", length.as_str()),
            ("target_items", targets.as_str()),
            ("candidates", block.as_str()),
        ],
    ) {
        Ok(reply) => hallucination_filter(&parse_id_list(&reply), candidates, catalog),
        Err(e) => {
            log::warn!("similarity rerank failed, keeping aggregated order: {e}");
            RerankedList {
                items: candidates.to_vec(),
            }
        }
    }
}

/// One LLM rerank of `candidates` against the user profile; empty profiles
/// skip the call.
pub fn rerank_general(
    gateway: &Gateway,
    candidates: &[ItemId],
    catalog: &Catalog,
    profile: &str,
) -> RerankedList {
    if profile.trim().is_empty() {
        return RerankedList {
            items: candidates.to_vec(),
        };
    }
    let block = candidate_block(candidates, catalog);
    let length = candidates.len().to_string();
    match gateway.request(
        PromptKind::GeneralRerank,
        &[
            ("length", length.as_str()),
            ("user_profile", profile),
            ("candidates", block.as_str()),
        ],
    ) {
        Ok(reply) => hallucination_filter(&parse_id_list(&reply), candidates, catalog),
        Err(e) => {
            log::warn!("general rerank failed, keeping aggregated order: {e}");
            RerankedList {
                items: candidates.to_vec(),
            }
        }
    }
}

/// Position-weighted fusion: `score(i) = w_a * index(i, a) + w_b *
/// index(i, b)` with 1-based positions; lower scores rank earlier, ties
/// break by position in `list_a`, then item id.
pub fn fuse(
    list_a: &RerankedList,
    w_a: f64,
    list_b: &RerankedList,
    w_b: f64,
) -> Result<FusedRanking, RerankError> {
    if list_a.items.len() != list_b.items.len() {
        return Err(RerankError::CandidateSetMismatch);
    }
    let pos_b: BTreeMap<ItemId, usize> = list_b
        .items
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i + 1))
        .collect();
    let mut scores = BTreeMap::new();
    let mut order: Vec<(f64, usize, ItemId)> = Vec::with_capacity(list_a.items.len());
    for (i, &id) in list_a.items.iter().enumerate() {
        let b = *pos_b
            .get(&id)
            .ok_or(RerankError::CandidateSetMismatch)?;
        let score = w_a * (i + 1) as f64 + w_b * b as f64;
        scores.insert(id, score);
        order.push((score, i, id));
    }
    if scores.len() != list_a.items.len() {
        return Err(RerankError::CandidateSetMismatch);
    }
    order.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    Ok(FusedRanking {
        scores,
        order: order.into_iter().map(|(_, _, id)| id).collect(),
    })
}

/// How the substitute/complement reranks participate in fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScMode {
    /// Both lists, fused by the substitute/complement intent weights.
    Dual,
    /// Only the list favored by intent memory (ties go to substitutes).
    Exclusive,
    /// Skip relational reranking entirely.
    Off,
}

#[derive(Clone, Copy, Debug)]
pub struct RerankOptions {
    pub sc_mode: ScMode,
    pub general_rerank: bool,
}

impl Default for RerankOptions {
    fn default() -> Self {
        RerankOptions {
            sc_mode: ScMode::Dual,
            general_rerank: true,
        }
    }
}

/// Full inference for one user: predict all tools, aggregate by tool memory,
/// take the top `k_prime` candidates, apply the substitute/complement and
/// general reranks, and fuse. Returns the final items with their fused
/// scores (lower is better).
pub fn final_ranking(
    gateway: &Gateway,
    state: &AgentState,
    tools: &ToolSet,
    seq: &BehaviorSequence,
    catalog: &Catalog,
    split: &SplitConfig,
    opts: &RerankOptions,
) -> Result<Vec<(ItemId, f64)>, RerankError> {
    let views = split_views(seq, split);
    let per_tool = tools.predict_all(state.user, views.train);
    let aggregated = aggregate(&state.rec_memory.weights, &per_tool)?;
    let candidates = top_k(&aggregated, split.k_prime.min(aggregated.len()));
    rerank_candidates(gateway, state, &candidates, catalog, opts)
}

/// Rerank-and-fuse over an existing candidate list; split out so callers can
/// aggregate with adjusted scores (e.g. ensemble-blended) first.
pub fn rerank_candidates(
    gateway: &Gateway,
    state: &AgentState,
    candidates: &[ItemId],
    catalog: &Catalog,
    opts: &RerankOptions,
) -> Result<Vec<(ItemId, f64)>, RerankError> {
    let identity = RerankedList {
        items: candidates.to_vec(),
    };

    let dual = match opts.sc_mode {
        ScMode::Off => fuse(&identity, 1.0, &identity, 0.0)?,
        ScMode::Exclusive => {
            // Ties go to substitutes.
            let use_subs = state.intent_memory.substitute >= state.intent_memory.complement;
            let titles = if use_subs {
                &state.substitutes
            } else {
                &state.complements
            };
            let reranked = rerank_similarity(gateway, candidates, catalog, titles);
            fuse(&reranked, 1.0, &reranked, 0.0)?
        }
        ScMode::Dual => {
            let subs = rerank_similarity(gateway, candidates, catalog, &state.substitutes);
            let coms = rerank_similarity(gateway, candidates, catalog, &state.complements);
            fuse(
                &subs,
                state.intent_memory.substitute,
                &coms,
                state.intent_memory.complement,
            )?
        }
    };

    let final_ranking = if opts.general_rerank {
        let dual_list = RerankedList {
            items: dual.order.clone(),
        };
        let general = rerank_general(gateway, candidates, catalog, &state.profile);
        // The dual list enters the last fusion with fixed weight 1.
        fuse(&dual_list, 1.0, &general, state.intent_memory.regular)?
    } else {
        dual
    };

    Ok(final_ranking
        .order
        .iter()
        .map(|&id| (id, final_ranking.scores[&id]))
        .collect())
}
