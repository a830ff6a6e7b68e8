//! Command-line and HTTP front end for scene memories.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Machine-readable
//! output goes to stdout; logs go to stderr.

pub mod live;
pub mod server;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use scenemem::agent::{run_query, AgentConfig, ModelClient, ScriptedClient};
use scenemem::eval::{load_cached_answers, load_qa, run_eval, AnswerSource};
use scenemem::memory::SceneMemory;
use scenemem::pipeline::{ingest_dir, IngestConfig};
use scenemem::tools::{canonical_json, shared, Registry, ToolCall, ToolContext};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "scenemem", version, about = "Build and query 3D scene memories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a memory from a scene bundle.
    Ingest {
        bundle_dir: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Answer one question with the tool-using agent.
    Query {
        memory_dir: PathBuf,
        question: String,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Serve the memory over HTTP.
    Serve {
        memory_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory crop references resolve against; defaults to the memory directory.
        #[arg(long)]
        crops_root: Option<PathBuf>,
        /// Step limit for query programs run by the `execute` tool.
        #[arg(long)]
        program_steps: Option<u64>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score answers on a QA set.
    Eval {
        qa: PathBuf,
        memories_root: PathBuf,
        /// Recorded answers, one JSON object per line.
        #[arg(long)]
        cached: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Invoke one tool directly.
    Tool {
        memory_dir: PathBuf,
        name: String,
        #[arg(long, default_value = "{}")]
        args: String,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// JSON array of scripted model actions, replayed in order.
    #[arg(long, conflicts_with = "model")]
    scripted: Option<PathBuf>,
    /// Model name on an OpenAI-compatible endpoint; the key comes from SCENEMEM_API_KEY.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = live::DEFAULT_API_BASE)]
    api_base: String,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    #[arg(long, default_value_t = scenemem::agent::DEFAULT_MAX_STEPS)]
    max_steps: usize,
}

impl ModelArgs {
    fn client(&self) -> Result<Option<Arc<dyn ModelClient>>, String> {
        if let Some(path) = &self.scripted {
            let c = ScriptedClient::from_file(path).map_err(|e| e.to_string())?;
            return Ok(Some(Arc::new(c)));
        }
        Ok(self.model.as_ref().map(|m| {
            Arc::new(live::LiveClient::from_env(&self.api_base, m, Duration::from_secs(self.timeout_secs))) as Arc<dyn ModelClient>
        }))
    }

    fn agent(&self) -> AgentConfig {
        AgentConfig {
            max_steps: self.max_steps,
            ..AgentConfig::default()
        }
    }
}

/// Runtime failure carrying the exit code.
struct Failure(i32, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_RUNTIME, e.to_string())
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn emit(line: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}")?;
    out.flush()?;
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest { bundle_dir, out } => {
            let (_, stats) = ingest_dir(&bundle_dir, &out, &IngestConfig::default())?;
            log::info!("ingested {} components into {}", stats.components, out.display());
            emit(&canonical_json(&stats))
        }
        Command::Query {
            memory_dir,
            question,
            model,
        } => {
            let client = model
                .client()
                .map_err(|e| Failure(EXIT_RUNTIME, e))?
                .ok_or_else(|| Failure(EXIT_USAGE, "query needs --scripted or --model".into()))?;
            let registry = Registry::standard(ToolContext::open(&memory_dir)?);
            let outcome = run_query(&question, &registry, client.as_ref(), &model.agent());
            emit(&canonical_json(&json!({
                "aborted": outcome.aborted,
                "answer": outcome.answer.render(),
                "dangling": outcome.answer.dangling,
                "tags": outcome.answer.tags,
                "transcript": outcome.transcript,
            })))?;
            if outcome.aborted {
                return Err(Failure(EXIT_RUNTIME, "agent aborted without a final answer".into()));
            }
            Ok(())
        }
        Command::Serve {
            memory_dir,
            bind,
            crops_root,
            program_steps,
            model,
        } => {
            let mut ctx = ToolContext::open(&memory_dir)?;
            if let Some(steps) = program_steps {
                ctx.limits.max_steps = steps;
            }
            let state = server::AppState {
                registry: Registry::standard(ctx),
                crops_root: Some(crops_root.unwrap_or(memory_dir)),
                client: model.client().map_err(|e| Failure(EXIT_RUNTIME, e))?,
                agent: model.agent(),
            };
            serve(state, &bind)
        }
        Command::Eval {
            qa,
            memories_root,
            cached,
            model,
        } => {
            let items = load_qa(&qa)?;
            let report = match cached {
                Some(path) => run_eval(&items, &memories_root, AnswerSource::Cached(load_cached_answers(&path)?)),
                None => {
                    let client = model
                        .client()
                        .map_err(|e| Failure(EXIT_RUNTIME, e))?
                        .ok_or_else(|| Failure(EXIT_USAGE, "eval needs --cached, --scripted or --model".into()))?;
                    let agent = model.agent();
                    let mut answer = |dir: &Path, memory: &SceneMemory, question: &str| {
                        let registry = Registry::standard(ToolContext::new(shared(memory.clone())).with_dir(dir));
                        let out = run_query(question, &registry, client.as_ref(), &agent);
                        if out.aborted {
                            Err("agent aborted without a final answer".to_string())
                        } else {
                            Ok(out.answer.render())
                        }
                    };
                    run_eval(&items, &memories_root, AnswerSource::Live(&mut answer))
                }
            };
            emit(&report.to_json())
        }
        Command::Tool { memory_dir, name, args } => {
            let arguments: serde_json::Value =
                serde_json::from_str(&args).map_err(|e| Failure(EXIT_USAGE, format!("--args is not valid JSON: {e}")))?;
            let registry = Registry::standard(ToolContext::open(&memory_dir)?);
            let result = registry.dispatch(&ToolCall::new(name, arguments));
            emit(&result.to_json())?;
            match result.error {
                Some(e) => Err(Failure(EXIT_RUNTIME, e.to_string())),
                None => Ok(()),
            }
        }
    }
}

fn serve(state: server::AppState, bind: &str) -> Result<(), Failure> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        log::info!("serving {} components on http://{addr}", state.registry.context().read().len());
        // The bound address is machine output so callers can use port 0.
        emit(&canonical_json(&json!({ "listening": addr.to_string() })))?;
        axum::serve(listener, server::router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
