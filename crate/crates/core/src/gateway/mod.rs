//! Single choke-point for LLM interaction: template rendering, a
//! chat-completion client, deterministic mock and replay backends, response
//! caching, and strict output parsing.
//!
//! With the mock or replay backends the whole pipeline is bit-exact
//! reproducible; with the HTTP backend every response is persisted to the
//! replay cache so a second run can be network-free.

mod cache;
mod http;
mod mock;
pub mod parse;
pub mod templates;

pub use cache::ReplayCache;
pub use http::HttpBackend;
pub use mock::{candidate_ids, section, MockOracle};
pub use parse::{
    parse_choice2, parse_choice3, parse_id_list, parse_rating, parse_title_lines, parse_yesno,
    ParseFailure,
};
pub use templates::render;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The nine prompt shapes the pipeline can issue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ProfileSummarize,
    GenerateSubstitutes,
    GenerateComplements,
    ToolCompare,
    IntentCompare,
    RegularIntent,
    GeneralRerank,
    SimilarityRerank,
    VdcgRate,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::ProfileSummarize => "profile_summarize",
            PromptKind::GenerateSubstitutes => "generate_substitutes",
            PromptKind::GenerateComplements => "generate_complements",
            PromptKind::ToolCompare => "tool_compare",
            PromptKind::IntentCompare => "intent_compare",
            PromptKind::RegularIntent => "regular_intent",
            PromptKind::GeneralRerank => "general_rerank",
            PromptKind::SimilarityRerank => "similarity_rerank",
            PromptKind::VdcgRate => "vdcg_rate",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct LlmRequest {
    pub kind: PromptKind,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("template {kind}: placeholder {name:?} not bound")]
    MissingPlaceholder { kind: PromptKind, name: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("mock oracle has no script for {kind} prompt {prompt:?}")]
    Unscripted { kind: PromptKind, prompt: String },
    #[error("uncached prompt in replay-only mode (key {key})")]
    UncachedPrompt { key: String },
    #[error("replay cache {path}: {msg}")]
    Cache { path: PathBuf, msg: String },
}

/// Where completions come from.
#[derive(Debug)]
pub enum LlmBackend {
    /// Live chat-completion endpoint.
    Http(HttpBackend),
    /// Deterministic scripted oracle.
    Mock(MockOracle),
    /// Previously recorded responses only; misses are errors.
    Replay(ReplayCache),
}

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    /// Model name; part of the request hash so caches are per-model.
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Maximum in-flight requests.
    pub concurrency: usize,
    pub timeout: Duration,
    /// Domain phrase spliced into templates, e.g. "Electronics on Amazon".
    pub domain: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            model: "mock".into(),
            temperature: 0.0,
            max_tokens: 512,
            concurrency: 8,
            timeout: Duration::from_secs(60),
            domain: "Groceries on Instacart".into(),
        }
    }
}

/// Cache key: hash of (kind, rendered prompt, temperature, model name) so
/// replays are stable across machines.
pub fn request_key(kind: PromptKind, prompt: &str, temperature: f64, model: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_str().as_bytes());
    hasher.update([0]);
    hasher.update(prompt.as_bytes());
    hasher.update([0]);
    hasher.update(format!("{temperature:?}").as_bytes());
    hasher.update([0]);
    hasher.update(model.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Shared LLM gateway: renders, throttles, completes, caches.
#[derive(Debug)]
pub struct Gateway {
    backend: LlmBackend,
    config: GatewayConfig,
    cache: Option<ReplayCache>,
    limiter: Semaphore,
}

impl Gateway {
    pub fn new(backend: LlmBackend, config: GatewayConfig) -> Self {
        let limiter = Semaphore::new(config.concurrency.max(1));
        Gateway {
            backend,
            config,
            cache: None,
            limiter,
        }
    }

    /// Enables write-through caching to `path`.
    pub fn with_cache(mut self, path: &Path) -> Result<Self, GatewayError> {
        self.cache = Some(ReplayCache::open(path)?);
        Ok(self)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn domain(&self) -> &str {
        &self.config.domain
    }

    /// Renders `kind` with `bindings` plus the configured domain phrase and
    /// completes it. This is the one call sites use.
    pub fn request(
        &self,
        kind: PromptKind,
        bindings: &[(&str, &str)],
    ) -> Result<String, GatewayError> {
        let mut all: Vec<(&str, &str)> = Vec::with_capacity(bindings.len() + 1);
        all.push(("domain", self.config.domain.as_str()));
        all.extend_from_slice(bindings);
        let prompt = templates::render(kind, &all)?;
        self.complete(&LlmRequest {
            kind,
            prompt,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        })
    }

    /// Completes a request, consulting the cache first and persisting fresh
    /// responses. Replay backends never touch the network.
    pub fn complete(&self, req: &LlmRequest) -> Result<String, GatewayError> {
        let key = request_key(req.kind, &req.prompt, req.temperature, &self.config.model);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                return Ok(hit);
            }
        }
        let response = match &self.backend {
            LlmBackend::Mock(mock) => mock.complete(req)?,
            LlmBackend::Replay(store) => match store.get(&key) {
                Some(hit) => hit,
                None => return Err(GatewayError::UncachedPrompt { key }),
            },
            LlmBackend::Http(http) => {
                let _permit = self.limiter.acquire();
                http.complete(req)?
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, req.kind.as_str(), &req.prompt, &response);
        }
        Ok(response)
    }
}

/// Counting semaphore bounding in-flight HTTP requests.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(count: usize) -> Self {
        Semaphore {
            permits: Mutex::new(count),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}
