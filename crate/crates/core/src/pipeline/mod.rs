//! Stage orchestration over on-disk artifacts. Every stage writes a
//! versioned artifact embedding the config hash and seed; re-running a stage
//! whose artifact already matches the current hash is a no-op skip, and a
//! stage whose prerequisites are missing (or built under a different config)
//! fails with the stage to run first.

pub mod runfile;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{optimize_agents, AgentStore, AgentStoreError, AGENT_STORE_FORMAT, AGENT_STORE_VERSION};
use crate::catalog::{ingest, split_views, Dataset, IngestError, IngestStats, UserId};
use crate::config::{tool_specs, BackendKind, ConfigError, RunConfig};
use crate::ensemble::{
    apply_ensemble, blend, train_ensemble, EnsembleError, EnsembleExample, EnsembleKind,
    EnsembleModel,
};
use crate::eval::{evaluate_run, EvalError};
use crate::gateway::{Gateway, GatewayError, HttpBackend, LlmBackend, MockOracle, ReplayCache};
use crate::rerank::{aggregate, rerank_candidates, RerankError};
use crate::tools::{
    load_checkpoint, read_scores_binary, save_checkpoint, top_k, ImportedScores, ScoreVector,
    ToolError, ToolHyperparams, ToolId, ToolModel, ToolSet, ToolVariant,
};
use runfile::{read_run_file, write_run_file, RunFile, RunFileError, UserRanking};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    TrainTools,
    OptimizeAgents,
    Infer,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::TrainTools => "train-tools",
            Stage::OptimizeAgents => "optimize-agents",
            Stage::Infer => "infer",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn all() -> [Stage; 5] {
        [
            Stage::Ingest,
            Stage::TrainTools,
            Stage::OptimizeAgents,
            Stage::Infer,
            Stage::Evaluate,
        ]
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing or stale {artifact}; run {stage} first")]
    MissingArtifact {
        stage: &'static str,
        artifact: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Agents(#[from] AgentStoreError),
    #[error(transparent)]
    Run(#[from] RunFileError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact {path}: {msg}")]
    Meta { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Artifact locations under the run directory.
#[derive(Clone, Debug)]
pub struct Paths {
    pub run_dir: PathBuf,
}

impl Paths {
    pub fn new(run_dir: &Path) -> Self {
        Paths {
            run_dir: run_dir.to_path_buf(),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.run_dir.join("dataset")
    }
    pub fn dataset_meta(&self) -> PathBuf {
        self.dataset_dir().join("meta.json")
    }
    pub fn tools_dir(&self) -> PathBuf {
        self.run_dir.join("tools")
    }
    pub fn tools_meta(&self) -> PathBuf {
        self.tools_dir().join("meta.json")
    }
    pub fn tool_checkpoint(&self, label: &str) -> PathBuf {
        self.tools_dir().join(format!("tool_{label}.json"))
    }
    pub fn ensemble_checkpoint(&self) -> PathBuf {
        self.tools_dir().join("ensemble.json")
    }
    pub fn agents_file(&self) -> PathBuf {
        self.run_dir.join("agents").join("agents.json")
    }
    pub fn run_file(&self) -> PathBuf {
        self.run_dir.join("infer").join("rankings.bin")
    }
    pub fn rankings_csv(&self) -> PathBuf {
        self.run_dir.join("infer").join("rankings.csv")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.run_dir.join("eval")
    }
    pub fn eval_meta(&self) -> PathBuf {
        self.eval_dir().join("meta.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.eval_dir().join("report.csv")
    }
    pub fn per_user_csv(&self) -> PathBuf {
        self.eval_dir().join("per_user.csv")
    }
    pub fn memories_csv(&self) -> PathBuf {
        self.run_dir.join("memories.csv")
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    format: String,
    version: u32,
    config_hash: String,
    seed: u64,
    stats: IngestStats,
}

#[derive(Serialize, Deserialize)]
struct ToolsMeta {
    format: String,
    version: u32,
    config_hash: String,
    seed: u64,
    labels: Vec<String>,
    ensemble: EnsembleKind,
}

#[derive(Serialize, Deserialize)]
struct EvalMeta {
    format: String,
    version: u32,
    config_hash: String,
    seed: u64,
    users_evaluated: usize,
    vdcg_skipped: usize,
    tool_compare: bool,
    sc_mode: crate::rerank::ScMode,
    general_rerank: bool,
}

fn read_meta<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Meta {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn write_meta<T: Serialize>(path: &Path, meta: &T) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(meta).expect("meta serialization");
    fs::write(path, json).map_err(io_err(path))
}

/// Hash embedded in an artifact, if the artifact exists and parses.
fn artifact_hash(path: &Path, kind: ArtifactKind) -> Option<String> {
    if !path.exists() {
        return None;
    }
    match kind {
        ArtifactKind::DatasetMeta => read_meta::<DatasetMeta>(path).ok().map(|m| m.config_hash),
        ArtifactKind::ToolsMeta => read_meta::<ToolsMeta>(path).ok().map(|m| m.config_hash),
        ArtifactKind::Agents => AgentStore::load(path).ok().map(|s| s.config_hash),
        ArtifactKind::Run => read_run_file(path).ok().map(|r| r.config_hash),
        ArtifactKind::EvalMeta => read_meta::<EvalMeta>(path).ok().map(|m| m.config_hash),
    }
}

#[derive(Clone, Copy)]
enum ArtifactKind {
    DatasetMeta,
    ToolsMeta,
    Agents,
    Run,
    EvalMeta,
}

fn stage_artifact(paths: &Paths, stage: Stage) -> (PathBuf, ArtifactKind) {
    match stage {
        Stage::Ingest => (paths.dataset_meta(), ArtifactKind::DatasetMeta),
        Stage::TrainTools => (paths.tools_meta(), ArtifactKind::ToolsMeta),
        Stage::OptimizeAgents => (paths.agents_file(), ArtifactKind::Agents),
        Stage::Infer => (paths.run_file(), ArtifactKind::Run),
        Stage::Evaluate => (paths.eval_meta(), ArtifactKind::EvalMeta),
    }
}

fn is_current(paths: &Paths, stage: Stage, hash: &str) -> bool {
    let (path, kind) = stage_artifact(paths, stage);
    artifact_hash(&path, kind).as_deref() == Some(hash)
}

fn require(paths: &Paths, stage: Stage, hash: &str) -> Result<(), PipelineError> {
    if is_current(paths, stage, hash) {
        Ok(())
    } else {
        let (path, _) = stage_artifact(paths, stage);
        Err(PipelineError::MissingArtifact {
            stage: stage.name(),
            artifact: path.display().to_string(),
        })
    }
}

/// Runs the requested stages in order, skipping any whose artifact already
/// matches the current config hash.
pub fn cmd_pipeline(cfg: &RunConfig, stages: &[Stage]) -> Result<Vec<StageOutcome>, PipelineError> {
    let paths = Paths::new(&cfg.run_dir);
    let hash = cfg.hash();
    let mut outcomes = Vec::with_capacity(stages.len());
    for &stage in stages {
        if is_current(&paths, stage, &hash) {
            log::info!("{stage}: artifact up to date, skipping");
            outcomes.push(StageOutcome {
                stage,
                skipped: true,
            });
            continue;
        }
        match stage {
            Stage::Ingest => stage_ingest(cfg, &paths, &hash)?,
            Stage::TrainTools => stage_train_tools(cfg, &paths, &hash)?,
            Stage::OptimizeAgents => stage_optimize(cfg, &paths, &hash)?,
            Stage::Infer => stage_infer(cfg, &paths, &hash)?,
            Stage::Evaluate => stage_evaluate(cfg, &paths, &hash)?,
        }
        outcomes.push(StageOutcome {
            stage,
            skipped: false,
        });
    }
    Ok(outcomes)
}

fn stage_ingest(cfg: &RunConfig, paths: &Paths, hash: &str) -> Result<(), PipelineError> {
    let opts = cfg.data.ingest_options()?;
    let dataset = ingest(&cfg.data.interactions, &cfg.data.items, &cfg.split, &opts)?;
    log::info!(
        "ingested {} users, {} items, {} interactions ({} duplicates removed)",
        dataset.users.len(),
        dataset.catalog.len(),
        dataset.stats.interactions_kept,
        dataset.stats.duplicates_removed
    );
    let dir = paths.dataset_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    crate::catalog::write_dataset(&dataset, &dir, b',')?;
    write_meta(
        &paths.dataset_meta(),
        &DatasetMeta {
            format: "medley-dataset".into(),
            version: 1,
            config_hash: hash.into(),
            seed: cfg.seed,
            stats: dataset.stats,
        },
    )
}

/// Loads the canonical dataset written by the ingest stage.
pub fn load_dataset(cfg: &RunConfig, paths: &Paths) -> Result<Dataset, PipelineError> {
    let dir = paths.dataset_dir();
    let opts = crate::catalog::IngestOptions {
        delimiter: b',',
        min_extra_interactions: cfg.data.min_extra_interactions,
    };
    Ok(ingest(
        &dir.join("interactions.csv"),
        &dir.join("items.csv"),
        &cfg.split,
        &opts,
    )?)
}

fn stage_train_tools(cfg: &RunConfig, paths: &Paths, hash: &str) -> Result<(), PipelineError> {
    require(paths, Stage::Ingest, hash)?;
    let dataset = load_dataset(cfg, paths)?;
    let dir = paths.tools_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let hyper = ToolHyperparams {
        mf: cfg.tools.mf.clone(),
        transition_decay: cfg.tools.transition_decay,
    };
    let specs = tool_specs(&cfg.tools)?;
    let mut labels = Vec::new();
    let mut models = Vec::new();
    for (index, (variant, label)) in specs.iter().enumerate() {
        let model = match variant {
            ToolVariant::ImportedScores => {
                let path = cfg.tools.imported_path.as_ref().expect("validated");
                load_imported(path, &dataset)?
            }
            variant => train_with_seed(*variant, &dataset, cfg, &hyper, index as u64)?,
        };
        save_checkpoint(&paths.tool_checkpoint(label), label, hash, cfg.seed, &model)?;
        log::info!("trained tool {label} ({variant:?})");
        labels.push(label.clone());
        models.push(model);
    }

    if cfg.ensemble.variant != EnsembleKind::Rc {
        let toolset = toolset_from(models.clone(), labels.clone(), cfg.tools.exclude_seen);
        let examples = ensemble_examples(&toolset, &dataset, cfg);
        let model = train_ensemble(
            cfg.ensemble.variant,
            &examples,
            &cfg.ensemble.hyper,
            cfg.seed,
        )?;
        let json = serde_json::to_string_pretty(&model).expect("ensemble serialization");
        let path = paths.ensemble_checkpoint();
        fs::write(&path, json).map_err(io_err(&path))?;
        log::info!(
            "trained {:?} ensemble ({} parameters)",
            cfg.ensemble.variant,
            model.param_count()
        );
    }

    write_meta(
        &paths.tools_meta(),
        &ToolsMeta {
            format: "medley-tools".into(),
            version: 1,
            config_hash: hash.into(),
            seed: cfg.seed,
            labels,
            ensemble: cfg.ensemble.variant,
        },
    )
}

fn train_with_seed(
    variant: ToolVariant,
    dataset: &Dataset,
    cfg: &RunConfig,
    hyper: &ToolHyperparams,
    tool_offset: u64,
) -> Result<ToolModel, PipelineError> {
    Ok(crate::tools::train_tool(
        variant,
        &dataset.sequences,
        dataset.catalog.len(),
        &cfg.split,
        hyper,
        cfg.seed.wrapping_add(tool_offset),
    )?)
}

fn load_imported(path: &Path, dataset: &Dataset) -> Result<ToolModel, PipelineError> {
    let imported = if path.extension().is_some_and(|e| e == "bin") {
        read_scores_binary(path)?
    } else {
        let delimiter = if path.extension().is_some_and(|e| e == "tsv") {
            b'\t'
        } else {
            b','
        };
        let (model, skipped) =
            ImportedScores::load_dsv(path, delimiter, &dataset.catalog, &dataset.users)?;
        if skipped > 0 {
            log::warn!("imported scores: skipped {skipped} rows with unknown keys");
        }
        model
    };
    Ok(ToolModel::ImportedScores(imported))
}

fn toolset_from(models: Vec<ToolModel>, labels: Vec<String>, exclude_seen: bool) -> ToolSet {
    ToolSet {
        tools: labels
            .into_iter()
            .zip(models)
            .enumerate()
            .map(|(index, (label, model))| (ToolId { index, label }, model))
            .collect(),
        exclude_seen,
    }
}

/// Loads the trained tool set (and optional ensemble) from checkpoints.
pub fn load_tools(
    cfg: &RunConfig,
    paths: &Paths,
) -> Result<(ToolSet, Option<EnsembleModel>), PipelineError> {
    let meta: ToolsMeta = read_meta(&paths.tools_meta())?;
    let mut models = Vec::new();
    let mut labels = Vec::new();
    for label in &meta.labels {
        let ckpt = load_checkpoint(&paths.tool_checkpoint(label))?;
        labels.push(label.clone());
        models.push(ckpt.model);
    }
    let ensemble = if meta.ensemble != EnsembleKind::Rc {
        let path = paths.ensemble_checkpoint();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Some(
            serde_json::from_str(&text).map_err(|e| PipelineError::Meta {
                path,
                msg: e.to_string(),
            })?,
        )
    } else {
        None
    };
    Ok((
        toolset_from(models, labels, cfg.tools.exclude_seen),
        ensemble,
    ))
}

fn ensemble_examples(tools: &ToolSet, dataset: &Dataset, cfg: &RunConfig) -> Vec<EnsembleExample> {
    dataset
        .sequences
        .par_iter()
        .map(|seq| {
            let views = split_views(seq, &cfg.split);
            let per_tool = tools.predict_all(seq.user, views.train);
            EnsembleExample {
                tool_scores: per_tool.into_iter().map(|v| v.scores).collect(),
                targets: views.target.iter().map(|i| i.0).collect(),
            }
        })
        .collect()
}

/// Builds the gateway from the config: deterministic echo mock, live HTTP
/// endpoint (auth token via environment variable only), or replay-only.
pub fn build_gateway(cfg: &RunConfig) -> Result<Gateway, PipelineError> {
    let section = &cfg.gateway;
    let backend = match section.backend {
        BackendKind::Mock => LlmBackend::Mock(MockOracle::echo()),
        BackendKind::Http => {
            let endpoint = section.endpoint.clone().ok_or_else(|| {
                ConfigError::Invalid("gateway.endpoint is required for the http backend".into())
            })?;
            let token = section
                .auth_env
                .as_ref()
                .and_then(|var| std::env::var(var).ok());
            LlmBackend::Http(HttpBackend::new(
                endpoint,
                section.model.clone(),
                token,
                std::time::Duration::from_secs(section.timeout_secs),
                section.retries,
            )?)
        }
        BackendKind::Replay => {
            let path = section.cache.clone().ok_or_else(|| {
                ConfigError::Invalid("gateway.cache is required for the replay backend".into())
            })?;
            LlmBackend::Replay(ReplayCache::open_read_only(&path)?)
        }
    };
    let mut gateway = Gateway::new(backend, section.gateway_config());
    if section.backend != BackendKind::Replay {
        if let Some(cache) = &section.cache {
            if let Some(parent) = cache.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(io_err(parent))?;
                }
            }
            gateway = gateway.with_cache(cache)?;
        }
    }
    Ok(gateway)
}

fn stage_optimize(cfg: &RunConfig, paths: &Paths, hash: &str) -> Result<(), PipelineError> {
    require(paths, Stage::Ingest, hash)?;
    require(paths, Stage::TrainTools, hash)?;
    let dataset = load_dataset(cfg, paths)?;
    let (tools, _) = load_tools(cfg, paths)?;
    let gateway = build_gateway(cfg)?;

    let optimize_cfg = cfg
        .agent
        .optimize_config(cfg.seed, cfg.ablation.tool_compare);
    let agents = optimize_agents(&gateway, &tools, &dataset, &cfg.split, &optimize_cfg);
    log::info!("optimized {} agents", agents.len());

    let store = AgentStore {
        format: AGENT_STORE_FORMAT.into(),
        version: AGENT_STORE_VERSION,
        config_hash: hash.into(),
        seed: cfg.seed,
        tool_labels: tools.labels(),
        agents,
    };
    let path = paths.agents_file();
    fs::create_dir_all(path.parent().unwrap()).map_err(io_err(&path))?;
    Ok(store.save(&path)?)
}

fn stage_infer(cfg: &RunConfig, paths: &Paths, hash: &str) -> Result<(), PipelineError> {
    require(paths, Stage::Ingest, hash)?;
    require(paths, Stage::TrainTools, hash)?;
    require(paths, Stage::OptimizeAgents, hash)?;
    let dataset = load_dataset(cfg, paths)?;
    let (tools, ensemble) = load_tools(cfg, paths)?;
    let store = AgentStore::load(&paths.agents_file())?;
    let gateway = build_gateway(cfg)?;
    let opts = cfg.ablation.rerank_options();

    let states: Vec<&crate::agent::AgentState> = store.agents.values().collect();
    let rankings: Vec<UserRanking> = states
        .par_iter()
        .map(|state| -> Result<UserRanking, PipelineError> {
            let seq = dataset.sequence(state.user);
            let views = split_views(seq, &cfg.split);
            let per_tool = tools.predict_all(state.user, views.train);
            let mut aggregated = aggregate(&state.rec_memory.weights, &per_tool)?;
            if let Some(model) = &ensemble {
                let tool_scores: Vec<Vec<f64>> =
                    per_tool.iter().map(|v| v.scores.clone()).collect();
                let learned = apply_ensemble(model, &tool_scores);
                aggregated =
                    ScoreVector::new(usize::MAX, state.user, blend(&aggregated.scores, &learned));
            }
            let k = cfg.split.k_prime.min(aggregated.len());
            let candidates = top_k(&aggregated, k);
            let ranked = rerank_candidates(&gateway, state, &candidates, &dataset.catalog, &opts)?;
            Ok(UserRanking {
                user: state.user.0,
                items: ranked.into_iter().map(|(id, score)| (id.0, score)).collect(),
            })
        })
        .collect::<Result<_, _>>()?;

    let run = RunFile {
        config_hash: hash.into(),
        seed: cfg.seed,
        rankings,
    };
    let run_path = paths.run_file();
    fs::create_dir_all(run_path.parent().unwrap()).map_err(io_err(&run_path))?;
    write_run_file(&run_path, &run)?;

    // Operator-facing DSV mirror of the binary run file.
    let mut csv = String::from("user_id,rank,item_id,score\n");
    for ranking in &run.rankings {
        let user_key = dataset.users.external_key(UserId(ranking.user));
        for (rank, &(item, score)) in ranking.items.iter().enumerate() {
            csv.push_str(&format!(
                "{user_key},{},{},{score:.6}\n",
                rank + 1,
                dataset.catalog.external_key(crate::catalog::ItemId(item)),
            ));
        }
    }
    let csv_path = paths.rankings_csv();
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    log::info!("wrote rankings for {} users", run.rankings.len());
    Ok(())
}

fn stage_evaluate(cfg: &RunConfig, paths: &Paths, hash: &str) -> Result<(), PipelineError> {
    require(paths, Stage::Ingest, hash)?;
    require(paths, Stage::Infer, hash)?;
    let dataset = load_dataset(cfg, paths)?;
    let run = read_run_file(&paths.run_file())?;
    let gateway = if cfg.eval.vdcg {
        Some(build_gateway(cfg)?)
    } else {
        None
    };
    let report = evaluate_run(
        &run,
        &dataset,
        &cfg.split,
        &cfg.eval.eval_config(),
        gateway.as_ref(),
    )?;

    let dir = paths.eval_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    fs::write(paths.report_csv(), report.to_csv()).map_err(io_err(&paths.report_csv()))?;
    fs::write(paths.per_user_csv(), report.per_user_csv())
        .map_err(io_err(&paths.per_user_csv()))?;
    for row in &report.rows {
        log::info!("{}@{} = {:.4}", row.metric, row.cutoff, row.value);
    }
    write_meta(
        &paths.eval_meta(),
        &EvalMeta {
            format: "medley-eval".into(),
            version: 1,
            config_hash: hash.into(),
            seed: cfg.seed,
            users_evaluated: report.users_evaluated,
            vdcg_skipped: report.vdcg_skipped,
            tool_compare: cfg.ablation.tool_compare,
            sc_mode: cfg.ablation.sc_mode,
            general_rerank: cfg.ablation.general_rerank,
        },
    )
}

/// Exports the per-user memory distribution CSV from the agent store.
pub fn export_memories(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    let paths = Paths::new(&cfg.run_dir);
    let hash = cfg.hash();
    require(&paths, Stage::Ingest, &hash)?;
    require(&paths, Stage::OptimizeAgents, &hash)?;
    let dataset = load_dataset(cfg, &paths)?;
    let store = AgentStore::load(&paths.agents_file())?;
    let path = paths.memories_csv();
    fs::write(&path, store.export_memories_csv(&dataset)).map_err(io_err(&path))?;
    Ok(path)
}

/// One artifact's verification result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifiedArtifact {
    pub path: PathBuf,
    pub stage: &'static str,
    pub matches: bool,
}

/// Re-hashes the config and compares it against every artifact present.
pub fn verify(cfg: &RunConfig) -> Vec<VerifiedArtifact> {
    let paths = Paths::new(&cfg.run_dir);
    let hash = cfg.hash();
    Stage::all()
        .into_iter()
        .filter_map(|stage| {
            let (path, kind) = stage_artifact(&paths, stage);
            artifact_hash(&path, kind).map(|found| VerifiedArtifact {
                path,
                stage: stage.name(),
                matches: found == hash,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataSection;
    use std::io::Write;

    /// Small synthetic dataset on disk plus a config pointing at it.
    fn fixture(dir: &Path) -> RunConfig {
        let data_dir = dir.join("data");
        fs::create_dir_all(&data_dir).unwrap();
        let mut items = String::from("item_id,title\n");
        for i in 0..40 {
            items.push_str(&format!("i{i:02},Prop {} widget {}\n", i % 7, i));
        }
        let mut inter = String::from("user_id,item_id,timestamp\n");
        for u in 0..6 {
            for t in 0..12 {
                let item = (u * 3 + t * 2) % 40;
                inter.push_str(&format!("u{u},i{item:02},{}\n", 100 + t));
            }
        }
        let mut f = fs::File::create(data_dir.join("items.csv")).unwrap();
        f.write_all(items.as_bytes()).unwrap();
        let mut f = fs::File::create(data_dir.join("interactions.csv")).unwrap();
        f.write_all(inter.as_bytes()).unwrap();

        RunConfig {
            seed: 7,
            workers: None,
            run_dir: dir.join("run"),
            data: DataSection {
                interactions: data_dir.join("interactions.csv"),
                items: data_dir.join("items.csv"),
                delimiter: ",".into(),
                min_extra_interactions: 0,
            },
            split: crate::catalog::SplitConfig {
                k: 1,
                c: 10,
                k_prime: 10,
                k_cpr: 5,
            },
            tools: Default::default(),
            agent: crate::config::AgentSection {
                epochs: 1,
                sample_size: 4,
                ..Default::default()
            },
            ensemble: Default::default(),
            ablation: Default::default(),
            gateway: Default::default(),
            eval: crate::config::EvalSection {
                cutoffs: vec![5, 10],
                ..Default::default()
            },
        }
    }

    #[test]
    fn full_pipeline_runs_and_second_pass_skips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path());
        let outcomes = cmd_pipeline(&cfg, &Stage::all()).unwrap();
        assert!(outcomes.iter().all(|o| !o.skipped));
        assert!(Paths::new(&cfg.run_dir).report_csv().exists());

        let outcomes = cmd_pipeline(&cfg, &Stage::all()).unwrap();
        assert!(outcomes.iter().all(|o| o.skipped));
    }

    #[test]
    fn evaluate_before_infer_names_missing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path());
        cmd_pipeline(&cfg, &[Stage::Ingest]).unwrap();
        let err = cmd_pipeline(&cfg, &[Stage::Evaluate]).unwrap_err();
        match err {
            PipelineError::MissingArtifact { stage, .. } => assert_eq!(stage, "infer"),
            other => panic!("unexpected: {other}"),
        }
        assert!(err.to_string().contains("run infer first"));
    }

    #[test]
    fn changed_config_invalidates_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cmd_pipeline(&cfg, &Stage::all()).unwrap();

        // Semantic change: prior artifacts are stale, verify reports it.
        cfg.seed = 8;
        let report = verify(&cfg);
        assert!(!report.is_empty());
        assert!(report.iter().all(|a| !a.matches));

        // Running a later stage alone refuses to reuse stale prerequisites.
        let err = cmd_pipeline(&cfg, &[Stage::Infer]).unwrap_err();
        assert!(matches!(err, PipelineError::MissingArtifact { .. }));

        // Re-running everything heals and verify passes again.
        cmd_pipeline(&cfg, &Stage::all()).unwrap();
        assert!(verify(&cfg).iter().all(|a| a.matches));
    }

    #[test]
    fn export_memories_writes_labeled_header() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path());
        cmd_pipeline(
            &cfg,
            &[Stage::Ingest, Stage::TrainTools, Stage::OptimizeAgents],
        )
        .unwrap();
        let path = export_memories(&cfg).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "user_id,m_G,m_S,m_M,m_sub,m_com,m_reg");
        assert_eq!(text.lines().count(), 1 + 4); // 4 sampled agents
    }

    #[test]
    fn pipeline_is_deterministic_across_run_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_a = fixture(dir.path());
        let mut cfg_b = cfg_a.clone();
        cfg_b.run_dir = dir.path().join("run_b");

        cmd_pipeline(&cfg_a, &Stage::all()).unwrap();
        cmd_pipeline(&cfg_b, &Stage::all()).unwrap();

        let paths_a = Paths::new(&cfg_a.run_dir);
        let paths_b = Paths::new(&cfg_b.run_dir);
        let run_a = fs::read(paths_a.run_file()).unwrap();
        let run_b = fs::read(paths_b.run_file()).unwrap();
        assert_eq!(run_a, run_b);
        let report_a = fs::read(paths_a.report_csv()).unwrap();
        let report_b = fs::read(paths_b.report_csv()).unwrap();
        assert_eq!(report_a, report_b);
    }

    #[test]
    fn ensemble_variant_trains_and_infers() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.ensemble.variant = EnsembleKind::Lr;
        cfg.ensemble.hyper.epochs = 3;
        cmd_pipeline(&cfg, &Stage::all()).unwrap();
        assert!(Paths::new(&cfg.run_dir).ensemble_checkpoint().exists());
    }

    #[test]
    fn imported_tool_joins_the_set() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());

        // Score file referencing external keys; unknown keys are skipped.
        let scores_path = dir.path().join("external_scores.csv");
        let mut scores = String::from("user_id,item_id,score\n");
        for u in 0..6 {
            for i in 0..40 {
                scores.push_str(&format!("u{u},i{i:02},{}\n", (i * 7 % 11) as f64 / 11.0));
            }
        }
        scores.push_str("ghost,i00,0.5\n");
        fs::write(&scores_path, scores).unwrap();

        cfg.tools.enabled.push("imported".into());
        cfg.tools.imported_path = Some(scores_path);
        // Four tools: the three-way LLM comparison is skipped, the
        // quantitative update still covers all four.
        cmd_pipeline(&cfg, &Stage::all()).unwrap();

        let paths = Paths::new(&cfg.run_dir);
        assert!(paths.tool_checkpoint("I").exists());
        let store = AgentStore::load(&paths.agents_file()).unwrap();
        assert_eq!(store.tool_labels, vec!["G", "S", "M", "I"]);
        let state = store.agents.values().next().unwrap();
        assert_eq!(state.rec_memory.weights.len(), 4);

        let path = export_memories(&cfg).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with("user_id,m_G,m_S,m_M,m_I,m_sub,m_com,m_reg"));
    }

    #[test]
    fn evaluate_stage_reports_vdcg_with_mock_gateway() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.eval.vdcg = true;
        cfg.eval.vdcg_cutoffs = vec![5];
        cmd_pipeline(&cfg, &Stage::all()).unwrap();
        let report = fs::read_to_string(Paths::new(&cfg.run_dir).report_csv()).unwrap();
        assert!(report.lines().any(|l| l.starts_with("vdcg,5,")), "{report}");
    }
}
