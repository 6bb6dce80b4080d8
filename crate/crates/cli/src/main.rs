//! Operator surface: one subcommand per pipeline stage plus memory export
//! and artifact verification. All runs are driven by a TOML config; a few
//! flags override it for convenience. Auth tokens come from the environment
//! variable named in the config, never from flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use medley::config::{load_config, BackendKind, RunConfig};
use medley::rerank::ScMode;
use medley::pipeline::{cmd_pipeline, export_memories, verify, PipelineError, Stage};

#[derive(Parser)]
#[command(
    name = "medley",
    version,
    about = "Multi-tool recommendation fusion with per-user agents and LLM reranking"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override the chat-completion endpoint (switches the backend to http).
    #[arg(long, global = true, value_name = "URL")]
    llm_endpoint: Option<String>,

    /// Replay cache path for LLM responses.
    #[arg(long, global = true, value_name = "PATH")]
    llm_cache: Option<PathBuf>,

    /// Serve LLM responses from the cache only; uncached prompts fail.
    #[arg(long, global = true)]
    replay_only: bool,

    /// Override the substitute/complement rerank mode (dual, exclusive, off).
    #[arg(long, global = true, value_name = "MODE")]
    sc_mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the raw interaction/item files into the canonical dataset.
    Ingest,
    /// Train the recommendation tools (and the ensemble, when configured).
    TrainTools,
    /// Run the per-user agent optimization loop.
    OptimizeAgents,
    /// Produce final rankings for all optimized agents.
    Infer,
    /// Score the run file and write the metric reports.
    Evaluate,
    /// Export the per-user memory distribution CSV.
    ExportMemories,
    /// Check that every artifact matches the current config hash.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let missing_artifact = e
                .downcast_ref::<PipelineError>()
                .is_some_and(|p| matches!(p, PipelineError::MissingArtifact { .. }));
            if missing_artifact {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--config <PATH> is required"))?;
    let mut cfg = load_config(&config_path)?;
    apply_overrides(&mut cfg, &cli)?;

    if let Some(workers) = cfg.workers {
        rayon_pool(workers)?;
    }

    match cli.command {
        Command::Ingest => run_stage(&cfg, Stage::Ingest),
        Command::TrainTools => run_stage(&cfg, Stage::TrainTools),
        Command::OptimizeAgents => run_stage(&cfg, Stage::OptimizeAgents),
        Command::Infer => run_stage(&cfg, Stage::Infer),
        Command::Evaluate => run_stage(&cfg, Stage::Evaluate),
        Command::ExportMemories => {
            let path = export_memories(&cfg)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let results = verify(&cfg);
            if results.is_empty() {
                println!("no artifacts found under {}", cfg.run_dir.display());
                return Ok(ExitCode::SUCCESS);
            }
            let mut ok = true;
            for artifact in &results {
                let status = if artifact.matches { "ok" } else { "MISMATCH" };
                println!("{:<16} {:<9} {}", artifact.stage, status, artifact.path.display());
                ok &= artifact.matches;
            }
            if ok {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: artifacts were built under a different config");
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn run_stage(cfg: &RunConfig, stage: Stage) -> anyhow::Result<ExitCode> {
    let outcomes = cmd_pipeline(cfg, &[stage])?;
    for outcome in outcomes {
        if outcome.skipped {
            println!("{}: up to date, skipped", outcome.stage);
        } else {
            println!("{}: done", outcome.stage);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> anyhow::Result<()> {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = Some(workers);
    }
    if let Some(endpoint) = &cli.llm_endpoint {
        cfg.gateway.backend = BackendKind::Http;
        cfg.gateway.endpoint = Some(endpoint.clone());
    }
    if let Some(cache) = &cli.llm_cache {
        cfg.gateway.cache = Some(cache.clone());
    }
    if cli.replay_only {
        cfg.gateway.backend = BackendKind::Replay;
    }
    if let Some(mode) = &cli.sc_mode {
        cfg.ablation.sc_mode = match mode.as_str() {
            "dual" => ScMode::Dual,
            "exclusive" => ScMode::Exclusive,
            "off" => ScMode::Off,
            other => anyhow::bail!("unknown --sc-mode {other:?} (dual, exclusive, off)"),
        };
    }
    cfg.validate()?;
    Ok(())
}

fn rayon_pool(workers: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| anyhow::anyhow!("failed to set worker pool: {e}"))
}
