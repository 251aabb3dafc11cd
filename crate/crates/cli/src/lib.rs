//! `doc2tool` command line: one subcommand per pipeline stage, each reading
//! the previous stage's artifacts from the output directory.

pub mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use doc2tool_core::executor::{Executor, ExecutorConfig, MAX_BODY_BYTES};
use doc2tool_core::exporter::serve_tools;
use doc2tool_core::oracles::{
    CompletionBackend, Embedder, HashingEmbedder, LiveBackend, LiveConfig, LiveEmbedder, OracleError, OracleGateway, ScriptedBackend,
};
use doc2tool_core::paramkb::{InferMode, ParamQuery};
use doc2tool_core::pipeline::{
    load_tools, open_kb, render_report_md, run_compile, run_export, run_extract, run_refine, run_report, run_validate, verified_toolset, Layout,
    StageError,
};
use doc2tool_core::refiner::Refiner;
use doc2tool_core::validator::{Judge, OracleJudge, RuleJudge, Validator};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use config::{ConfigError, EmbeddingBackend, JudgeKind, LlmBackend, Options, PipelineConfig};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "doc2tool", version, about = "Turn REST API documentation into validated, executable tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Screen and extract documentation pages into API documents
    Extract,
    /// Compile API documents into tool specs
    Compile,
    /// Execute every tool once and label the outcome
    Validate,
    /// Repair failing tools against the parameter knowledge base
    Refine,
    /// Print ranked candidate values for a tool's parameters
    Infer {
        /// Tool id or name
        #[arg(long)]
        tool: String,
        /// Only this parameter (default: the required ones)
        #[arg(long)]
        param: Option<String>,
        /// Hide this API's own KB entries
        #[arg(long)]
        leave_out: Option<String>,
        /// Sample from the retrieval pool with --seed instead of taking the top k
        #[arg(long)]
        sample: bool,
    },
    /// Write verified tools as Python files and an OpenAPI document
    Export,
    /// Serve verified tools over HTTP
    Serve,
    /// Render pass rates, label counts and cause estimates
    Report,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Stage(_) | Self::Failed(_) => EXIT_STAGE,
        })
    }
}

fn oracle_config_err(e: OracleError) -> CliError {
    CliError::Config(ConfigError::Invalid { field: "llm-backend", reason: e.to_string() })
}

/// Flags over the config file over defaults.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let file = match &cli.config {
        Some(p) => Options::from_file(p)?,
        None => Options::default(),
    };
    PipelineConfig::resolve(cli.options.clone().over(file))
}

/// Everything a stage may need, built from the configuration on demand.
pub struct Context {
    pub config: PipelineConfig,
    pub layout: Layout,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Self {
        let layout = Layout::new(&config.out);
        Self { config, layout }
    }

    pub fn gateway(&self) -> Result<OracleGateway, CliError> {
        let c = &self.config;
        let live = || LiveConfig::from_env().map_err(oracle_config_err);
        let backend: Arc<dyn CompletionBackend> = match c.llm_backend {
            LlmBackend::Live => Arc::new(LiveBackend::new(live()?).map_err(oracle_config_err)?),
            LlmBackend::Scripted => {
                let dir = c.fixtures.as_ref().ok_or(ConfigError::Missing("--fixtures"))?;
                Arc::new(ScriptedBackend::load_dir(dir).map_err(oracle_config_err)?)
            }
        };
        let embedder: Arc<dyn Embedder> = match c.embedding_backend {
            EmbeddingBackend::Hashing => Arc::new(HashingEmbedder),
            EmbeddingBackend::Live => Arc::new(LiveEmbedder::new(live()?, None).map_err(oracle_config_err)?),
        };
        Ok(OracleGateway::new(backend, embedder))
    }

    pub fn executor(&self) -> Result<Arc<Executor>, CliError> {
        let c = &self.config;
        let config = ExecutorConfig {
            timeout: c.timeout,
            courtesy_delay: c.courtesy_delay,
            max_body_bytes: MAX_BODY_BYTES,
            policy: c.policy.clone(),
            rewrites: c.rewrites.clone(),
        };
        Executor::new(config).map(Arc::new).map_err(|e| CliError::Failed(e.to_string()))
    }

    pub fn validator(&self, gateway: &OracleGateway) -> Result<Validator, CliError> {
        let judge: Arc<dyn Judge> = match self.config.judge {
            JudgeKind::Rule => Arc::new(RuleJudge),
            JudgeKind::Oracle => Arc::new(OracleJudge::new(gateway.clone())),
        };
        Ok(Validator::new(self.executor()?, judge))
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli)?;
    run_command(&cli.command, Context::new(config)).await
}

pub async fn run_command(command: &Command, ctx: Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let layout = &ctx.layout;
    match command {
        Command::Extract => {
            let input = c.input.as_ref().ok_or(ConfigError::Missing("--input"))?;
            let gw = ctx.gateway()?;
            let s = run_extract(&gw, input, layout, c.jobs).await?;
            print_json(&json!({ "documents": s.documents, "extracted": s.extracted.len(), "filtered": s.filtered, "failed": s.failed }))
        }
        Command::Compile => {
            let gw = ctx.gateway()?;
            let s = run_compile(&gw, layout, &c.policy, c.mode).await?;
            print_json(&json!({ "tools": s.tools.len(), "unresolved": s.unresolved.len(), "rejected": s.rejected }))
        }
        Command::Validate => {
            let gw = ctx.gateway()?;
            let validator = ctx.validator(&gw)?;
            let mut kb = open_kb(&c.kb, &gw).await?;
            let r = run_validate(&validator, layout, &mut kb, c.jobs).await?;
            print_json(&json!({ "tools": r.total, "passed": r.passed, "pass_rate": r.pass_rate, "labels": r.label_counts }))
        }
        Command::Refine => {
            let gw = ctx.gateway()?;
            let refiner = Refiner::new(gw.clone(), ctx.validator(&gw)?, c.max_rounds);
            let mut kb = open_kb(&c.kb, &gw).await?;
            let r = run_refine(&refiner, layout, &mut kb, c.jobs).await?;
            print_json(&json!({
                "passed_before": r.passed_before,
                "passed_after": r.passed_after,
                "refine_calls": r.refine_calls,
                "kb_values_recorded": r.kb_values_recorded,
            }))
        }
        Command::Infer { tool, param, leave_out, sample } => {
            let gw = ctx.gateway()?;
            let kb = open_kb(&c.kb, &gw).await?;
            let out = infer(&ctx, &kb, tool, param.as_deref(), leave_out.as_deref(), *sample).await?;
            print_json(&out)
        }
        Command::Export => {
            let s = run_export(layout)?;
            print_json(&json!({ "exported": s.tools }))
        }
        Command::Serve => {
            let set = verified_toolset(layout)?;
            let handle = serve_tools(set, ctx.executor()?, &c.bind).await.map_err(|e| CliError::Failed(e.to_string()))?;
            println!("listening on {}", handle.base_url());
            let _ = std::io::stdout().flush();
            tokio::signal::ctrl_c().await.map_err(|e| CliError::Failed(e.to_string()))?;
            handle.shutdown().await;
            Ok(())
        }
        Command::Report => {
            let r = run_report(layout)?;
            print!("{}", render_report_md(&r));
            Ok(())
        }
    }
}

async fn infer(
    ctx: &Context,
    kb: &doc2tool_core::paramkb::ParamKb,
    tool: &str,
    param: Option<&str>,
    leave_out: Option<&str>,
    sample: bool,
) -> Result<Value, CliError> {
    let tools = load_tools(&ctx.layout)?;
    let spec = tools.iter().find(|t| t.tool_id == tool || t.name == tool).ok_or_else(|| CliError::Failed(format!("unknown tool {tool}")))?;
    let params: Vec<_> = match param {
        Some(p) => vec![spec.param(p).ok_or_else(|| CliError::Failed(format!("{} has no parameter {p}", spec.tool_id)))?],
        None => spec.required_params().collect(),
    };
    let view = match leave_out {
        Some(api) => kb.leave_one_api_out(api).map_err(StageError::from)?,
        None => kb.view(),
    };
    let mode = if sample { InferMode::Sample { seed: ctx.config.seed } } else { InferMode::TopK };
    let mut out = Vec::new();
    for p in params {
        let candidates = view.infer_candidates(&ParamQuery::for_param(spec, p), mode).await.map_err(StageError::from)?;
        out.push(json!({ "name": p.name, "candidates": candidates }));
    }
    Ok(json!({ "tool": spec.tool_id, "mode": mode, "params": out }))
}
