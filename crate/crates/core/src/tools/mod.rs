//! Pluggable full-ranking tools: every tool takes a user plus history and
//! emits one score per catalog item. Three lightweight built-ins cover the
//! collaborative (matrix factorization), sequential (transition counts), and
//! graph (co-visitation) modeling families, and a fourth imports precomputed
//! score matrices produced elsewhere.

mod covisit;
mod imported;
mod mf;
mod transition;

pub use covisit::CoVisitModel;
pub use imported::{read_scores_binary, write_scores_binary, ImportedScores};
pub use mf::{MfHyperparams, MfModel};
pub use transition::TransitionModel;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{BehaviorSequence, ItemId, SplitConfig, UserId};

/// Sentinel assigned to excluded (already consumed) items before normalization.
pub const EXCLUDED_SCORE: f64 = f64::NEG_INFINITY;

/// Position of a tool in the tool set plus its display label (e.g. "G").
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolId {
    pub index: usize,
    pub label: String,
}

/// Which built-in model a tool runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolVariant {
    MatrixFactorization,
    SequentialTransition,
    CoVisitationGraph,
    ImportedScores,
}

/// Dense per-item scores emitted by one tool for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub tool: usize,
    pub user: UserId,
    pub scores: Vec<f64>,
    /// Set when the tool could not score this user directly and fell back
    /// to popularity ordering.
    pub popularity_fallback: bool,
}

impl ScoreVector {
    pub fn new(tool: usize, user: UserId, scores: Vec<f64>) -> Self {
        ScoreVector {
            tool,
            user,
            scores,
            popularity_fallback: false,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("no training data: every sequence has an empty train prefix")]
    EmptyTraining,
    #[error("checkpoint {path}: {msg}")]
    BadCheckpoint { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("imported scores {path}: {msg}")]
    BadScoresFile { path: PathBuf, msg: String },
}

/// A trained tool model. Prediction is a pure function of
/// (model, user, history); no randomness is consumed at inference.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolModel {
    MatrixFactorization(MfModel),
    SequentialTransition(TransitionModel),
    CoVisitationGraph(CoVisitModel),
    ImportedScores(ImportedScores),
}

impl ToolModel {
    pub fn variant(&self) -> ToolVariant {
        match self {
            ToolModel::MatrixFactorization(_) => ToolVariant::MatrixFactorization,
            ToolModel::SequentialTransition(_) => ToolVariant::SequentialTransition,
            ToolModel::CoVisitationGraph(_) => ToolVariant::CoVisitationGraph,
            ToolModel::ImportedScores(_) => ToolVariant::ImportedScores,
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            ToolModel::MatrixFactorization(m) => m.n_items(),
            ToolModel::SequentialTransition(m) => m.n_items(),
            ToolModel::CoVisitationGraph(m) => m.n_items(),
            ToolModel::ImportedScores(m) => m.n_items(),
        }
    }

    fn raw_scores(&self, user: UserId, history: &[ItemId]) -> (Vec<f64>, bool) {
        match self {
            ToolModel::MatrixFactorization(m) => m.scores(user),
            ToolModel::SequentialTransition(m) => m.scores(history),
            ToolModel::CoVisitationGraph(m) => (m.scores(history), false),
            ToolModel::ImportedScores(m) => (m.scores(user), false),
        }
    }
}

/// Training knobs shared across built-in tools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolHyperparams {
    pub mf: MfHyperparams,
    /// Per-step-back weight applied to older transitions.
    pub transition_decay: f64,
}

impl Default for ToolHyperparams {
    fn default() -> Self {
        ToolHyperparams {
            mf: MfHyperparams::default(),
            transition_decay: 0.9,
        }
    }
}

/// Trains one tool on the training prefixes (`s[..n-k]`) of the given
/// sequences. Deterministic for a fixed seed.
pub fn train_tool(
    variant: ToolVariant,
    sequences: &[BehaviorSequence],
    n_items: usize,
    split: &SplitConfig,
    hyper: &ToolHyperparams,
    seed: u64,
) -> Result<ToolModel, ToolError> {
    let prefixes: Vec<&[ItemId]> = sequences
        .iter()
        .map(|s| &s.items[..s.len() - split.k])
        .collect();
    if prefixes.iter().all(|p| p.is_empty()) {
        return Err(ToolError::EmptyTraining);
    }
    match variant {
        ToolVariant::MatrixFactorization => Ok(ToolModel::MatrixFactorization(MfModel::train(
            &prefixes, n_items, &hyper.mf, seed,
        )?)),
        ToolVariant::SequentialTransition => Ok(ToolModel::SequentialTransition(
            TransitionModel::train(&prefixes, n_items, hyper.transition_decay),
        )),
        ToolVariant::CoVisitationGraph => Ok(ToolModel::CoVisitationGraph(CoVisitModel::train(
            &prefixes, n_items,
        ))),
        ToolVariant::ImportedScores => panic!("imported scores are loaded, not trained"),
    }
}

/// Scores every catalog item for `user`. Items present in `history` receive
/// the `EXCLUDED_SCORE` sentinel when `exclude_seen` is set, pushing them to
/// the bottom of the ranking.
pub fn predict(
    model: &ToolModel,
    tool_index: usize,
    user: UserId,
    history: &[ItemId],
    exclude_seen: bool,
) -> ScoreVector {
    let (mut scores, fallback) = model.raw_scores(user, history);
    if exclude_seen {
        for &item in history {
            if item.index() < scores.len() {
                scores[item.index()] = EXCLUDED_SCORE;
            }
        }
    }
    ScoreVector {
        tool: tool_index,
        user,
        scores,
        popularity_fallback: fallback,
    }
}

/// Min-max normalization over non-sentinel entries into [0, 1]. Sentinels map
/// to 0 and constant vectors to 0.5 so heterogeneous tools become
/// commensurable before weighted summation.
pub fn normalize_scores(v: &ScoreVector) -> ScoreVector {
    let mut out = v.clone();
    normalize_slice(&mut out.scores);
    out
}

/// In-place slice form of [`normalize_scores`], shared with ensemble blending.
pub fn normalize_slice(scores: &mut [f64]) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &s in scores.iter() {
        if s == EXCLUDED_SCORE {
            continue;
        }
        min = min.min(s);
        max = max.max(s);
    }
    if !min.is_finite() {
        // All entries are sentinels.
        for s in scores.iter_mut() {
            *s = 0.0;
        }
        return;
    }
    let range = max - min;
    for s in scores.iter_mut() {
        if *s == EXCLUDED_SCORE {
            *s = 0.0;
        } else if range == 0.0 {
            *s = 0.5;
        } else {
            *s = (*s - min) / range;
        }
    }
}

/// Top `k` items by descending score; ties broken by ascending item id so the
/// ordering is total.
pub fn top_k(v: &ScoreVector, k: usize) -> Vec<ItemId> {
    assert!(k <= v.len(), "top_k({k}) over {} items", v.len());
    let mut idx: Vec<u32> = (0..v.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        v.scores[b as usize]
            .partial_cmp(&v.scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx.into_iter().map(ItemId).collect()
}

/// 1-based rank of `item` under the same total order as [`top_k`].
pub fn rank_of(v: &ScoreVector, item: ItemId) -> usize {
    let s = v.scores[item.index()];
    let mut rank = 1;
    for (i, &other) in v.scores.iter().enumerate() {
        if other > s || (other == s && (i as u32) < item.0) {
            rank += 1;
        }
    }
    rank
}

/// A labeled set of trained tools plus the shared prediction protocol flag.
#[derive(Clone, Debug)]
pub struct ToolSet {
    pub tools: Vec<(ToolId, ToolModel)>,
    pub exclude_seen: bool,
}

impl ToolSet {
    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.tools.iter().map(|(id, _)| id.label.clone()).collect()
    }

    /// Normalized score vectors for every tool, in tool order.
    pub fn predict_all(&self, user: UserId, history: &[ItemId]) -> Vec<ScoreVector> {
        self.tools
            .iter()
            .map(|(id, model)| {
                normalize_scores(&predict(model, id.index, user, history, self.exclude_seen))
            })
            .collect()
    }
}

/// Versioned checkpoint wrapper: self-describing header plus the model body.
#[derive(Serialize, Deserialize)]
pub struct ToolCheckpoint {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_items: usize,
    pub model: ToolModel,
}

pub const CHECKPOINT_FORMAT: &str = "medley-tool";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    label: &str,
    config_hash: &str,
    seed: u64,
    model: &ToolModel,
) -> Result<(), ToolError> {
    let ckpt = ToolCheckpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        label: label.into(),
        config_hash: config_hash.into(),
        seed,
        n_items: model.n_items(),
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&ckpt).expect("checkpoint serialization");
    fs::write(path, json).map_err(|source| ToolError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ToolCheckpoint, ToolError> {
    let text = fs::read_to_string(path).map_err(|source| ToolError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ckpt: ToolCheckpoint =
        serde_json::from_str(&text).map_err(|e| ToolError::BadCheckpoint {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(ToolError::BadCheckpoint {
            path: path.to_path_buf(),
            msg: format!("unknown format {:?}", ckpt.format),
        });
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(ToolError::BadCheckpoint {
            path: path.to_path_buf(),
            msg: format!("unsupported version {}", ckpt.version),
        });
    }
    Ok(ckpt)
}
