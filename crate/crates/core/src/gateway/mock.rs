//! Deterministic scripted backend for tests and offline runs.

use std::collections::HashMap;
use std::sync::Arc;

use super::{GatewayError, LlmRequest, PromptKind};

type ScriptFn = dyn Fn(&LlmRequest) -> Option<String> + Send + Sync;

/// A fully deterministic oracle: a script maps each request to a response.
/// Requests the script declines are an error, never silent improvisation.
#[derive(Clone)]
pub struct MockOracle {
    script: Arc<ScriptFn>,
}

impl std::fmt::Debug for MockOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MockOracle")
    }
}

impl MockOracle {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&LlmRequest) -> Option<String> + Send + Sync + 'static,
    {
        MockOracle { script: Arc::new(f) }
    }

    /// Script table keyed by exact rendered prompt.
    pub fn from_table(table: HashMap<String, String>) -> Self {
        MockOracle::from_fn(move |req| table.get(&req.prompt).cloned())
    }

    /// Echo oracle: answers every prompt kind with a fixed deterministic
    /// strategy (first group, identity reranks, profile = first history
    /// line), useful for smoke runs without a live endpoint.
    pub fn echo() -> Self {
        MockOracle::from_fn(|req| Some(echo_response(req)))
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<String, GatewayError> {
        (self.script)(req).ok_or_else(|| GatewayError::Unscripted {
            kind: req.kind,
            prompt: req.prompt.chars().take(120).collect(),
        })
    }
}

fn echo_response(req: &LlmRequest) -> String {
    match req.kind {
        PromptKind::ProfileSummarize => {
            let items = section(&req.prompt, "[Historical Items]");
            let first = items.lines().next().unwrap_or("").trim();
            format!("Shopper with repeat interest in {first}")
        }
        PromptKind::GenerateSubstitutes | PromptKind::GenerateComplements => {
            section(&req.prompt, "[Historical Items]").to_string()
        }
        PromptKind::ToolCompare => "A".to_string(),
        PromptKind::IntentCompare => "1".to_string(),
        PromptKind::RegularIntent => "No".to_string(),
        PromptKind::GeneralRerank | PromptKind::SimilarityRerank => {
            candidate_ids(&req.prompt).join("\n")
        }
        PromptKind::VdcgRate => {
            let candidate = section(&req.prompt, "[Candidate Item]");
            let target = section(&req.prompt, "[Target Item]");
            overlap_rating(candidate, target).to_string()
        }
    }
}

/// Text between `header` and the next bracketed section (or the trailing
/// instruction sentence).
pub fn section<'a>(prompt: &'a str, header: &str) -> &'a str {
    let Some(start) = prompt.find(header) else {
        return "";
    };
    let body = &prompt[start + header.len()..];
    let end = body
        .find("\n[")
        .or_else(|| body.find("\nThe output"))
        .unwrap_or(body.len());
    body[..end].trim()
}

/// Candidate ids as printed in `(ID, description)` lines, in prompt order.
pub fn candidate_ids(prompt: &str) -> Vec<String> {
    section(prompt, "[Candidate Item List in format of (ID, description)]")
        .lines()
        .filter_map(|line| {
            let line = line.trim().strip_prefix('(')?;
            let (id, _) = line.split_once(',')?;
            Some(id.trim().to_string())
        })
        .collect()
}

/// Word-overlap rating in 0..=9: identical descriptions rate 9.
fn overlap_rating(candidate: &str, target: &str) -> u32 {
    if candidate == target && !candidate.is_empty() {
        return 9;
    }
    let target_words: std::collections::HashSet<&str> = target.split_whitespace().collect();
    let shared = candidate
        .split_whitespace()
        .filter(|w| target_words.contains(w))
        .count() as u32;
    (shared * 3).min(8)
}
