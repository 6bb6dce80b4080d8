//! Run configuration: a TOML file with strict (unknown keys rejected)
//! parsing, validation, and a canonical hash embedded into every artifact.
//!
//! The hash covers the semantic parameters of the experiment. Storage
//! locations (`run_dir`, the replay cache path) and the worker count are
//! excluded: they change where and how fast results land, never what they
//! are.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{LearningRates, OptimizeConfig};
use crate::catalog::{IngestOptions, SplitConfig};
use crate::ensemble::{EnsembleHyperparams, EnsembleKind};
use crate::eval::EvalConfig;
use crate::gateway::GatewayConfig;
use crate::rerank::{RerankOptions, ScMode};
use crate::tools::{MfHyperparams, ToolVariant};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker thread count; runtime-only, excluded from the config hash.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Where stage artifacts land; excluded from the config hash.
    pub run_dir: PathBuf,
    pub data: DataSection,
    #[serde(default = "default_split")]
    pub split: SplitConfig,
    #[serde(default)]
    pub tools: ToolsSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_split() -> SplitConfig {
    SplitConfig::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub interactions: PathBuf,
    pub items: PathBuf,
    /// "," or "\t".
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default)]
    pub min_extra_interactions: usize,
}

fn default_delimiter() -> String {
    ",".into()
}

impl DataSection {
    pub fn delimiter_byte(&self) -> Result<u8, ConfigError> {
        match self.delimiter.as_str() {
            "," => Ok(b','),
            "\t" | "\\t" | "tab" => Ok(b'\t'),
            other => Err(ConfigError::Invalid(format!(
                "unsupported delimiter {other:?} (use \",\" or \"\\t\")"
            ))),
        }
    }

    pub fn ingest_options(&self) -> Result<IngestOptions, ConfigError> {
        Ok(IngestOptions {
            delimiter: self.delimiter_byte()?,
            min_extra_interactions: self.min_extra_interactions,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolsSection {
    /// Tool names in order: "graph", "sequential", "mf", "imported".
    #[serde(default = "default_tools")]
    pub enabled: Vec<String>,
    #[serde(default = "default_true")]
    pub exclude_seen: bool,
    #[serde(default)]
    pub mf: MfHyperparams,
    #[serde(default = "default_transition_decay")]
    pub transition_decay: f64,
    /// Score file for the "imported" tool (.csv/.tsv or .bin).
    #[serde(default)]
    pub imported_path: Option<PathBuf>,
}

fn default_tools() -> Vec<String> {
    vec!["graph".into(), "sequential".into(), "mf".into()]
}

fn default_true() -> bool {
    true
}

fn default_transition_decay() -> f64 {
    0.9
}

impl Default for ToolsSection {
    fn default() -> Self {
        ToolsSection {
            enabled: default_tools(),
            exclude_seen: true,
            mf: MfHyperparams::default(),
            transition_decay: default_transition_decay(),
            imported_path: None,
        }
    }
}

/// (variant, label) pairs for the enabled tools.
pub fn tool_specs(section: &ToolsSection) -> Result<Vec<(ToolVariant, String)>, ConfigError> {
    let mut specs = Vec::new();
    for name in &section.enabled {
        let spec = match name.as_str() {
            "graph" => (ToolVariant::CoVisitationGraph, "G".to_string()),
            "sequential" => (ToolVariant::SequentialTransition, "S".to_string()),
            "mf" => (ToolVariant::MatrixFactorization, "M".to_string()),
            "imported" => (ToolVariant::ImportedScores, "I".to_string()),
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown tool {other:?} (expected graph, sequential, mf, imported)"
                )))
            }
        };
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(ConfigError::Invalid("tools.enabled is empty".into()));
    }
    let mut labels: Vec<&str> = specs.iter().map(|(_, l)| l.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() != specs.len() {
        return Err(ConfigError::Invalid(
            "tools.enabled lists a tool more than once".into(),
        ));
    }
    Ok(specs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    #[serde(default = "default_rate")]
    pub alpha: f64,
    #[serde(default = "default_rate")]
    pub beta: f64,
    #[serde(default = "default_rate")]
    pub gamma: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    /// Generated substitute/complement list length; defaults to the window
    /// size c.
    #[serde(default)]
    pub sc_length: Option<usize>,
}

fn default_rate() -> f64 {
    0.05
}
fn default_decay() -> f64 {
    0.8
}
fn default_epochs() -> usize {
    3
}
fn default_sample_size() -> usize {
    160
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            alpha: default_rate(),
            beta: default_rate(),
            gamma: default_rate(),
            decay: default_decay(),
            epochs: default_epochs(),
            sample_size: default_sample_size(),
            sc_length: None,
        }
    }
}

impl AgentSection {
    pub fn optimize_config(&self, seed: u64, tool_compare: bool) -> OptimizeConfig {
        OptimizeConfig {
            rates: LearningRates {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
                decay: self.decay,
            },
            epochs: self.epochs,
            sample_size: self.sample_size,
            seed,
            tool_compare,
            sc_length: self.sc_length,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_variant")]
    pub variant: EnsembleKind,
    #[serde(default)]
    pub hyper: EnsembleHyperparams,
}

fn default_variant() -> EnsembleKind {
    EnsembleKind::Rc
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            variant: default_variant(),
            hyper: EnsembleHyperparams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(default = "default_true")]
    pub tool_compare: bool,
    #[serde(default = "default_sc_mode")]
    pub sc_mode: ScMode,
    #[serde(default = "default_true")]
    pub general_rerank: bool,
}

fn default_sc_mode() -> ScMode {
    ScMode::Dual
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            tool_compare: true,
            sc_mode: ScMode::Dual,
            general_rerank: true,
        }
    }
}

impl AblationSection {
    pub fn rerank_options(&self) -> RerankOptions {
        RerankOptions {
            sc_mode: self.sc_mode,
            general_rerank: self.general_rerank,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    /// Environment variable holding the bearer token (never a flag).
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Replay cache path; excluded from the config hash.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_domain")]
    pub domain: String,
}

fn default_backend() -> BackendKind {
    BackendKind::Mock
}
fn default_model() -> String {
    "mock".into()
}
fn default_max_tokens() -> u32 {
    512
}
fn default_concurrency() -> usize {
    8
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_domain() -> String {
    "Groceries on Instacart".into()
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection {
            backend: default_backend(),
            endpoint: None,
            model: default_model(),
            auth_env: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            concurrency: default_concurrency(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            cache: None,
            domain: default_domain(),
        }
    }
}

impl GatewaySection {
    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            concurrency: self.concurrency,
            timeout: Duration::from_secs(self.timeout_secs),
            domain: self.domain.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    #[serde(default = "default_vdcg_cutoffs")]
    pub vdcg_cutoffs: Vec<usize>,
    #[serde(default)]
    pub vdcg: bool,
    #[serde(default)]
    pub vdcg_cap: bool,
}

fn default_cutoffs() -> Vec<usize> {
    vec![10, 20]
}
fn default_vdcg_cutoffs() -> Vec<usize> {
    vec![5, 10]
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: default_cutoffs(),
            vdcg_cutoffs: default_vdcg_cutoffs(),
            vdcg: false,
            vdcg_cap: false,
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            cutoffs: self.cutoffs.clone(),
            vdcg_cutoffs: self.vdcg_cutoffs.clone(),
            vdcg: self.vdcg,
            vdcg_cap: self.vdcg_cap,
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.split.validate().map_err(ConfigError::Invalid)?;
        self.data.delimiter_byte()?;
        tool_specs(&self.tools)?;
        if self.tools.enabled.iter().any(|t| t == "imported")
            && self.tools.imported_path.is_none()
        {
            return Err(ConfigError::Invalid(
                "tools.imported_path is required when the imported tool is enabled".into(),
            ));
        }
        for (name, rate) in [
            ("agent.alpha", self.agent.alpha),
            ("agent.beta", self.agent.beta),
            ("agent.gamma", self.agent.gamma),
        ] {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(self.agent.decay > 0.0 && self.agent.decay <= 1.0) {
            return Err(ConfigError::Invalid(
                "agent.decay must be in (0, 1]".into(),
            ));
        }
        if self.agent.sample_size == 0 {
            return Err(ConfigError::Invalid("agent.sample_size must be >= 1".into()));
        }
        if self.gateway.backend == BackendKind::Http && self.gateway.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "gateway.endpoint is required for the http backend".into(),
            ));
        }
        if matches!(self.gateway.backend, BackendKind::Replay) && self.gateway.cache.is_none() {
            return Err(ConfigError::Invalid(
                "gateway.cache is required for the replay backend".into(),
            ));
        }
        if self.eval.cutoffs.is_empty() {
            return Err(ConfigError::Invalid("eval.cutoffs is empty".into()));
        }
        Ok(())
    }

    /// Canonical hash over semantic parameters. Storage knobs (`run_dir`,
    /// `workers`, `gateway.cache`) are stripped before hashing.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialization");
        let obj = value.as_object_mut().unwrap();
        obj.remove("run_dir");
        obj.remove("workers");
        if let Some(gateway) = obj.get_mut("gateway").and_then(|g| g.as_object_mut()) {
            gateway.remove("cache");
        }
        let canonical = serde_json::to_string(&value).expect("config serialization");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MINIMAL: &str = r#"
run_dir = "runs/demo"

[data]
interactions = "data/interactions.csv"
items = "data/items.csv"
"#;

    fn write_cfg(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let (_dir, path) = write_cfg(MINIMAL);
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.split.k, 1);
        assert_eq!(cfg.split.c, 10);
        assert_eq!(cfg.split.k_prime, 20);
        assert_eq!(cfg.agent.sample_size, 160);
        assert_eq!(cfg.agent.decay, 0.8);
        assert_eq!(cfg.gateway.temperature, 0.0);
        assert_eq!(cfg.tools.enabled, vec!["graph", "sequential", "mf"]);
        assert_eq!(cfg.ensemble.variant, EnsembleKind::Rc);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let (_dir, path) = write_cfg(&format!("{MINIMAL}\nnot_a_key = 3\n"));
        let err = load_config(&path).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");

        let (_dir, path) = write_cfg(&format!("{MINIMAL}\n[agent]\ntypo_rate = 0.1\n"));
        assert!(load_config(&path).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let (_dir, path) = write_cfg(&format!("{MINIMAL}\n[split]\nk_cpr = 99\n"));
        assert!(load_config(&path).is_err());

        let (_dir, path) = write_cfg(&format!("{MINIMAL}\n[agent]\ndecay = 1.5\n"));
        assert!(load_config(&path).is_err());

        let (_dir, path) = write_cfg(&format!(
            "{MINIMAL}\n[gateway]\nbackend = \"http\"\n"
        ));
        assert!(load_config(&path).is_err());
    }

    #[test]
    fn hash_ignores_storage_knobs_only() {
        let (_dir, path) = write_cfg(MINIMAL);
        let base = load_config(&path).unwrap();

        let mut moved = base.clone();
        moved.run_dir = PathBuf::from("elsewhere");
        moved.workers = Some(12);
        moved.gateway.cache = Some(PathBuf::from("other-cache.jsonl"));
        assert_eq!(base.hash(), moved.hash());

        let mut semantic = base.clone();
        semantic.seed = 7;
        assert_ne!(base.hash(), semantic.hash());

        let mut semantic = base;
        semantic.agent.alpha = 0.01;
        assert_ne!(semantic.hash(), moved.hash());
    }

    #[test]
    fn tool_specs_mapping() {
        let section = ToolsSection::default();
        let specs = tool_specs(&section).unwrap();
        assert_eq!(
            specs,
            vec![
                (ToolVariant::CoVisitationGraph, "G".to_string()),
                (ToolVariant::SequentialTransition, "S".to_string()),
                (ToolVariant::MatrixFactorization, "M".to_string()),
            ]
        );
    }
}
