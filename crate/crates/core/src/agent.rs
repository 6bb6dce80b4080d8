//! Per-user agent state and the memory optimization loop.
//!
//! Each agent holds a summarized profile, generated substitute/complement
//! lists, and two weight memories: one over recommendation tools and one
//! over reasoning intents. Optimization replays the held-out targets through
//! three reflection signals per epoch:
//!
//! - an LLM comparison of the tools' top items against the target (+alpha to
//!   the chosen tool),
//! - a quantitative comparison of the target's rank across tools (+beta,
//!   split by normalized reciprocal ranks),
//! - an LLM intent discrimination between the substitute and complement
//!   lists plus a general-interest probe (+gamma).
//!
//! Learning rates decay by a fixed factor after every epoch. A parse failure
//! on any LLM reply contributes no update, so memories stay valid.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{split_views, Catalog, Dataset, ItemId, SplitConfig, UserId};
use crate::gateway::{
    parse_choice2, parse_choice3, parse_title_lines, parse_yesno, Gateway, GatewayError,
    PromptKind,
};
use crate::tools::{rank_of, top_k, ScoreVector, ToolSet};

/// Per-user non-negative weights over the tool set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecToolMemory {
    pub weights: Vec<f64>,
}

impl RecToolMemory {
    /// Uniform start: early aggregation is a plain average.
    pub fn uniform(n_tools: usize) -> Self {
        RecToolMemory {
            weights: vec![1.0 / n_tools as f64; n_tools],
        }
    }
}

/// Per-user weights over substitute, complement, and general-interest
/// reasoning modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentMemory {
    pub substitute: f64,
    pub complement: f64,
    pub regular: f64,
}

impl IntentMemory {
    pub fn uniform() -> Self {
        IntentMemory {
            substitute: 1.0 / 3.0,
            complement: 1.0 / 3.0,
            regular: 1.0 / 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub decay: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            alpha: 0.05,
            beta: 0.05,
            gamma: 0.05,
            decay: 0.8,
        }
    }
}

/// Applies one epoch of decay to all three rates.
pub fn decay_rates(rates: &LearningRates) -> LearningRates {
    LearningRates {
        alpha: rates.alpha * rates.decay,
        beta: rates.beta * rates.decay,
        gamma: rates.gamma * rates.decay,
        decay: rates.decay,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub user: UserId,
    pub profile: String,
    pub substitutes: Vec<String>,
    pub complements: Vec<String>,
    pub rec_memory: RecToolMemory,
    pub intent_memory: IntentMemory,
    /// Completed optimization passes.
    pub epoch: usize,
}

impl AgentState {
    pub fn new(user: UserId, n_tools: usize) -> Self {
        AgentState {
            user,
            profile: String::new(),
            substitutes: Vec::new(),
            complements: Vec::new(),
            rec_memory: RecToolMemory::uniform(n_tools),
            intent_memory: IntentMemory::uniform(),
            epoch: 0,
        }
    }
}

/// Summarizes the training history into a profile. Empty replies fall back
/// to the joined titles of the last `c` items so the profile is never empty.
pub fn summarize_profile(
    gateway: &Gateway,
    train: &[ItemId],
    catalog: &Catalog,
    split: &SplitConfig,
) -> Result<String, GatewayError> {
    assert!(!train.is_empty(), "profile needs a non-empty history");
    let descriptions = catalog.join_descriptions(train);
    let reply = gateway.request(
        PromptKind::ProfileSummarize,
        &[("item_descriptions", &descriptions)],
    )?;
    let profile = reply.trim();
    if profile.is_empty() {
        let start = train.len().saturating_sub(split.c);
        Ok(catalog.join_descriptions(&train[start..]).replace('\n', "; "))
    } else {
        Ok(profile.to_string())
    }
}

/// Generates the substitute and complement title lists from the recency
/// window: exactly two LLM calls per user. Unparseable replies become empty
/// lists and downstream reranks degrade to identity.
pub fn generate_sc(
    gateway: &Gateway,
    window: &[ItemId],
    catalog: &Catalog,
    length: usize,
) -> Result<(Vec<String>, Vec<String>), GatewayError> {
    let descriptions = catalog.join_descriptions(window);
    let len_text = length.to_string();
    let bindings = [
        ("length", len_text.as_str()),
        ("item_descriptions", descriptions.as_str()),
    ];
    let mut subs = parse_title_lines(&gateway.request(PromptKind::GenerateSubstitutes, &bindings)?);
    let mut coms = parse_title_lines(&gateway.request(PromptKind::GenerateComplements, &bindings)?);
    subs.truncate(length);
    coms.truncate(length);
    Ok((subs, coms))
}

/// LLM tool comparison: the tools' top items are presented as groups A/B/C
/// in the (seeded) randomized `label_order`, and the chosen tool's weight is
/// bumped by `alpha`. Returns the chosen tool index, or `None` when the
/// reply did not parse (no update).
///
/// The three-group prompt fixes the tool count at 3; callers with a
/// different tool set size skip this signal.
pub fn tool_compare_update(
    gateway: &Gateway,
    memory: &mut RecToolMemory,
    tool_tops: &[Vec<ItemId>],
    label_order: &[usize],
    target: &[ItemId],
    catalog: &Catalog,
    alpha: f64,
) -> Result<Option<usize>, GatewayError> {
    assert_eq!(tool_tops.len(), memory.weights.len());
    assert_eq!(label_order.len(), tool_tops.len());
    if tool_tops.len() != 3 {
        log::warn!(
            "LLM tool comparison supports exactly 3 tools, got {}; skipping",
            tool_tops.len()
        );
        return Ok(None);
    }
    let groups: Vec<String> = label_order
        .iter()
        .map(|&tool| catalog.join_descriptions(&tool_tops[tool]))
        .collect();
    let target_text = catalog.join_descriptions(target);
    let reply = gateway.request(
        PromptKind::ToolCompare,
        &[
            ("group_a", &groups[0]),
            ("group_b", &groups[1]),
            ("group_c", &groups[2]),
            ("target", &target_text),
        ],
    )?;
    match parse_choice3(&reply) {
        Ok(label) => {
            let tool = label_order[label];
            memory.weights[tool] += alpha;
            Ok(Some(tool))
        }
        Err(failure) => {
            log::debug!("tool comparison reply unparsed: {failure}");
            Ok(None)
        }
    }
}

/// Quantitative comparison: for every target item, each tool earns beta
/// times its normalized reciprocal rank of that item.
pub fn rank_compare_update(
    memory: &mut RecToolMemory,
    per_tool_scores: &[ScoreVector],
    target: &[ItemId],
    beta: f64,
) {
    assert_eq!(per_tool_scores.len(), memory.weights.len());
    for &item in target {
        let inv_ranks: Vec<f64> = per_tool_scores
            .iter()
            .map(|v| 1.0 / rank_of(v, item) as f64)
            .collect();
        let total: f64 = inv_ranks.iter().sum();
        for (weight, inv) in memory.weights.iter_mut().zip(&inv_ranks) {
            *weight += beta * inv / total;
        }
    }
}

/// Outcome of one intent discrimination pass, mostly for assertions in tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntentUpdate {
    /// Some(true) when the substitute list was chosen, Some(false) for the
    /// complement list; None when the reply did not parse.
    pub chose_substitutes: Option<bool>,
    /// Some(true) when no clear substitute/complement pattern was found
    /// (which is what bumps the general-interest weight).
    pub general_interest: Option<bool>,
}

/// Two LLM probes update the intent memory. Group 1 holds the agent's
/// substitute list, group 2 its complements; the general probe asks whether
/// the history shows clear substitute/complement patterns, and a "No" bumps
/// the regular weight.
pub fn intent_discriminate_update(
    gateway: &Gateway,
    state: &mut AgentState,
    target: &[ItemId],
    full_history: &[ItemId],
    catalog: &Catalog,
    gamma: f64,
) -> Result<IntentUpdate, GatewayError> {
    let mut outcome = IntentUpdate::default();
    let memory = &mut state.intent_memory;

    let target_text = catalog.join_descriptions(target);
    let group_1 = state.substitutes.join("\n");
    let group_2 = state.complements.join("\n");
    let reply = gateway.request(
        PromptKind::IntentCompare,
        &[
            ("group_1", &group_1),
            ("group_2", &group_2),
            ("target", &target_text),
        ],
    )?;
    match parse_choice2(&reply) {
        Ok(0) => {
            memory.substitute += gamma;
            outcome.chose_substitutes = Some(true);
        }
        Ok(_) => {
            memory.complement += gamma;
            outcome.chose_substitutes = Some(false);
        }
        Err(failure) => log::debug!("intent comparison reply unparsed: {failure}"),
    }

    let history_text = catalog.join_descriptions(full_history);
    let reply = gateway.request(
        PromptKind::RegularIntent,
        &[("item_descriptions", &history_text)],
    )?;
    match parse_yesno(&reply) {
        Ok(has_patterns) => {
            if !has_patterns {
                memory.regular += gamma;
            }
            outcome.general_interest = Some(!has_patterns);
        }
        Err(failure) => log::debug!("general-interest reply unparsed: {failure}"),
    }

    Ok(outcome)
}

#[derive(Clone, Debug)]
pub struct OptimizeConfig {
    pub rates: LearningRates,
    pub epochs: usize,
    pub sample_size: usize,
    pub seed: u64,
    /// When false, the LLM tool comparison signal is skipped (ablation).
    pub tool_compare: bool,
    /// Requested substitute/complement list length; defaults to the window
    /// size `c` when unset.
    pub sc_length: Option<usize>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            rates: LearningRates::default(),
            epochs: 3,
            sample_size: 160,
            seed: 0,
            tool_compare: true,
            sc_length: None,
        }
    }
}

/// Versioned on-disk store of optimized agents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentStore {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub tool_labels: Vec<String>,
    pub agents: BTreeMap<u32, AgentState>,
}

pub const AGENT_STORE_FORMAT: &str = "medley-agents";
pub const AGENT_STORE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum AgentStoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("agent store {path}: {msg}")]
    Bad { path: PathBuf, msg: String },
}

impl AgentStore {
    pub fn save(&self, path: &Path) -> Result<(), AgentStoreError> {
        let json = serde_json::to_string_pretty(self).expect("agent store serialization");
        fs::write(path, json).map_err(|source| AgentStoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AgentStoreError> {
        let text = fs::read_to_string(path).map_err(|source| AgentStoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let store: AgentStore =
            serde_json::from_str(&text).map_err(|e| AgentStoreError::Bad {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        if store.format != AGENT_STORE_FORMAT || store.version != AGENT_STORE_VERSION {
            return Err(AgentStoreError::Bad {
                path: path.to_path_buf(),
                msg: format!("unknown format {:?} v{}", store.format, store.version),
            });
        }
        Ok(store)
    }

    /// Memory distribution export: `user_id,m_<label>...,m_sub,m_com,m_reg`.
    pub fn export_memories_csv(&self, dataset: &Dataset) -> String {
        let mut out = String::from("user_id");
        for label in &self.tool_labels {
            out.push_str(&format!(",m_{label}"));
        }
        out.push_str(",m_sub,m_com,m_reg\n");
        for (user, state) in &self.agents {
            out.push_str(dataset.users.external_key(UserId(*user)));
            for w in &state.rec_memory.weights {
                out.push_str(&format!(",{w:.9}"));
            }
            out.push_str(&format!(
                ",{:.9},{:.9},{:.9}\n",
                state.intent_memory.substitute,
                state.intent_memory.complement,
                state.intent_memory.regular
            ));
        }
        out
    }
}

/// Deterministic user sample of `size` drawn with the run seed.
pub fn sample_users(n_users: usize, size: usize, seed: u64) -> Vec<UserId> {
    let mut ids: Vec<u32> = (0..n_users as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(size.min(n_users));
    ids.sort_unstable();
    ids.into_iter().map(UserId).collect()
}

/// Runs the full optimization loop over a seeded user sample. Per-user
/// failures are logged and skipped; everyone else completes. Users are
/// processed in parallel, with per-user determinism guaranteed by deriving
/// the label-shuffling RNG from (seed, user).
pub fn optimize_agents(
    gateway: &Gateway,
    tools: &ToolSet,
    dataset: &Dataset,
    split: &SplitConfig,
    cfg: &OptimizeConfig,
) -> BTreeMap<u32, AgentState> {
    let sampled = sample_users(dataset.users.len(), cfg.sample_size, cfg.seed);
    let results: Vec<Option<(u32, AgentState)>> = sampled
        .par_iter()
        .map(|&user| match optimize_one(gateway, tools, dataset, split, cfg, user) {
            Ok(state) => Some((user.0, state)),
            Err(e) => {
                log::warn!("agent optimization failed for user {user}: {e}");
                None
            }
        })
        .collect();
    results.into_iter().flatten().collect()
}

fn optimize_one(
    gateway: &Gateway,
    tools: &ToolSet,
    dataset: &Dataset,
    split: &SplitConfig,
    cfg: &OptimizeConfig,
    user: UserId,
) -> Result<AgentState, GatewayError> {
    let seq = dataset.sequence(user);
    let views = split_views(seq, split);
    let catalog = &dataset.catalog;
    let mut state = AgentState::new(user, tools.len());

    state.profile = summarize_profile(gateway, views.train, catalog, split)?;
    let sc_length = cfg.sc_length.unwrap_or(split.c);
    let (subs, coms) = generate_sc(gateway, views.window, catalog, sc_length)?;
    state.substitutes = subs;
    state.complements = coms;

    // Tool outputs are fixed across epochs: models and history don't change.
    let per_tool = tools.predict_all(user, views.train);
    let tool_tops: Vec<Vec<ItemId>> = per_tool.iter().map(|v| top_k(v, split.k_cpr)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e3779b97f4a7c15u64 ^ user.0 as u64));
    let mut rates = cfg.rates;
    for _ in 0..cfg.epochs {
        if cfg.tool_compare {
            let mut label_order: Vec<usize> = (0..tools.len()).collect();
            label_order.shuffle(&mut rng);
            tool_compare_update(
                gateway,
                &mut state.rec_memory,
                &tool_tops,
                &label_order,
                views.target,
                catalog,
                rates.alpha,
            )?;
        }
        rank_compare_update(&mut state.rec_memory, &per_tool, views.target, rates.beta);
        intent_discriminate_update(
            gateway,
            &mut state,
            views.target,
            &seq.items,
            catalog,
            rates.gamma,
        )?;
        rates = decay_rates(&rates);
        state.epoch += 1;
    }
    Ok(state)
}
