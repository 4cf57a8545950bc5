//! `genonet` command line: the HTTP service plus direct access to each stage.
//!
//! Every subcommand is configured from the `GENONET_*` environment variables
//! (see `genonet_core::config`); flags override them where offered.

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use genonet_core::codegen::{generate_script, lint_structure, Dialect};
use genonet_core::config::ServiceConfig;
use genonet_core::intent::{extract_intent, merge_and_default, KeywordTable};
use genonet_core::interpret::{parse_event_log, parse_flowmonitor, summarize, InterpretInput, SummaryStyle};
use genonet_core::orchestrator::{Attachment, OrchestratorError, SessionOverrides};
use genonet_core::retrieval::KnowledgeIndex;
use genonet_core::sandbox::{debug_loop, Backend, ExecTarget, Ns3Executor, Sandbox, SandboxPermits};
use genonet_gateway::{AppState, AUTH_TOKEN_VAR, BIND_ADDR_VAR, DEFAULT_BIND_ADDR};

#[derive(Parser)]
#[command(name = "genonet", version, about = "Natural-language front end for ns-3 simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        /// Listen address; defaults to GENONET_BIND_ADDR or 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Read messages from stdin, one per line, and print each reply.
    Chat {
        /// Resume this session, or create it under this id.
        #[arg(long)]
        session_id: Option<String>,
        /// Files attached to the first message.
        #[arg(long = "attach")]
        attachments: Vec<PathBuf>,
        /// Print each turn as JSON instead of its reply text.
        #[arg(long)]
        json: bool,
    },
    /// Generate a simulation script from a description.
    Generate {
        #[arg(long)]
        prompt: String,
        #[arg(long, value_enum, default_value_t = DialectArg::Cpp)]
        dialect: DialectArg,
        /// Write the script here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a script file or a named upstream example, repairing failures.
    Run {
        /// A script path, or an example name such as `second.py`.
        target: String,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        /// Per-phase timeout in seconds.
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long, default_value_t = 3)]
        max_attempts: u32,
        /// Print the full outcome as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Summarize simulator output.
    Interpret {
        #[arg(value_enum)]
        kind: InterpretKind,
        file: PathBuf,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Add every `*.txt` document in a directory to a saved index.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        index: PathBuf,
    },
    /// Query the knowledge index.
    Search {
        query: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        /// Saved index to search; defaults to the configured corpus.
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DialectArg {
    Cpp,
    Python,
}

impl From<DialectArg> for Dialect {
    fn from(d: DialectArg) -> Self {
        match d {
            DialectArg::Cpp => Dialect::Cpp,
            DialectArg::Python => Dialect::Python,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Stub,
    Ns3,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Stub => Backend::Stub,
            BackendArg::Ns3 => Backend::Ns3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpretKind {
    Flowmon,
    Log,
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { bind } => serve(bind),
        Command::Chat {
            session_id,
            attachments,
            json,
        } => chat(session_id, &attachments, json),
        Command::Generate { prompt, dialect, out } => generate(&prompt, dialect.into(), out.as_deref()),
        Command::Run {
            target,
            backend,
            timeout,
            max_attempts,
            json,
        } => run(&target, backend.map(Into::into), timeout, max_attempts, json),
        Command::Interpret { kind, file, json } => interpret(kind, &file, json),
        Command::Ingest { dir, index } => ingest(&dir, &index),
        Command::Search { query, k, index } => search(&query, k, index.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(bind: Option<String>) -> CliResult {
    let config = ServiceConfig::from_env()?;
    let orchestrator = Arc::new(config.build()?);
    let state = AppState::new(orchestrator).with_auth_token(std::env::var(AUTH_TOKEN_VAR).ok());
    let addr = bind
        .or_else(|| std::env::var(BIND_ADDR_VAR).ok())
        .unwrap_or_else(|| DEFAULT_BIND_ADDR.to_string());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(genonet_gateway::serve(state, &addr))?;
    Ok(ExitCode::SUCCESS)
}

fn read_attachment(path: &Path) -> std::io::Result<Attachment> {
    Ok(Attachment {
        name: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        content: std::fs::read_to_string(path)?,
    })
}

fn chat(session_id: Option<String>, attachments: &[PathBuf], json: bool) -> CliResult {
    let orch = ServiceConfig::from_env()?.build()?;
    let id = match session_id {
        Some(id) if orch.session(&id).is_ok() => id,
        Some(id) => orch.create_session_with_id(&id, &SessionOverrides::default())?.session_id,
        None => orch.create_session(&SessionOverrides::default())?.session_id,
    };
    eprintln!("session {id}");
    let mut pending: Vec<Attachment> = attachments.iter().map(|p| read_attachment(p)).collect::<Result<_, _>>()?;
    let mut failed = false;
    let stdout = std::io::stdout();
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let result = orch.handle_turn(&id, &line, &pending, &mut |e| {
            eprintln!("[turn {}] {}: {}", e.turn, e.stage.as_str(), e.detail);
        });
        pending.clear();
        let turn = match result {
            Ok(turn) => turn,
            Err(OrchestratorError::TurnFailed(turn)) => {
                failed = true;
                *turn
            }
            Err(e) => return Err(e.into()),
        };
        let mut out = stdout.lock();
        if json {
            writeln!(out, "{}", serde_json::to_string(&turn)?)?;
        } else {
            writeln!(out, "{}\n", turn.reply)?;
        }
        out.flush()?;
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn generate(prompt: &str, dialect: Dialect, out: Option<&Path>) -> CliResult {
    let config = ServiceConfig::from_env()?;
    let gateway = config.gateway()?;
    let index = config.index()?;
    let context = index.resolve(&index.query(prompt, config.orchestrator.retrieval_k.max(1))?);
    let partial = extract_intent(&gateway, prompt, &context, &KeywordTable::default())?;
    let extracted = merge_and_default(&partial)?;
    for d in &extracted.disagreements {
        eprintln!("note: {d:?}");
    }
    let generation = generate_script(
        &extracted.spec,
        dialect,
        config.orchestrator.generation_mode,
        &gateway,
        config.clock().as_ref(),
    )?;
    let lint = lint_structure(&generation.artifact);
    for check in lint.failed() {
        eprintln!("structure check failed: {check}");
    }
    match out {
        Some(path) => {
            std::fs::write(path, &generation.artifact.source)?;
            eprintln!("wrote {} ({})", path.display(), generation.artifact.spec_digest.short(12));
        }
        None => print!("{}", generation.artifact.source),
    }
    Ok(ExitCode::SUCCESS)
}

fn run(target: &str, backend: Option<Backend>, timeout: Option<f64>, max_attempts: u32, json: bool) -> CliResult {
    let mut config = ServiceConfig::from_env()?;
    if let Some(t) = timeout {
        config.timeout = Some(Duration::try_from_secs_f64(t)?);
    }
    let executor: Arc<dyn genonet_core::sandbox::Executor> = match backend.unwrap_or(config.backend) {
        Backend::Stub => Arc::new(config.stub_executor()),
        Backend::Ns3 => Arc::new(Ns3Executor::from_env()?),
    };
    let sandbox = Sandbox::new(
        executor,
        config.limits(),
        config.sandbox_dir.clone(),
        SandboxPermits::new(config.max_sandboxes.unwrap_or(1)),
        config.clock(),
    );
    let path = Path::new(target);
    let exec_target = if path.is_file() {
        ExecTarget::Script {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| target.to_string()),
            dialect: if path.extension().is_some_and(|e| e == "py") {
                Dialect::Python
            } else {
                Dialect::Cpp
            },
            source: std::fs::read_to_string(path)?,
        }
    } else {
        ExecTarget::Example(target.to_string())
    };
    let gateway = config.gateway()?;
    let outcome = debug_loop(&sandbox, &gateway, exec_target, max_attempts);
    if json {
        println!("{}", serde_json::to_string_pretty(&outcome)?);
    } else {
        for a in &outcome.attempts {
            eprintln!(
                "attempt {}: {:?} phase, exit {}, {:.3} s",
                a.attempt,
                a.phase,
                a.exit_status.map_or("none".into(), |c| c.to_string()),
                a.wall_time_s
            );
        }
        if let Some(last) = outcome.attempts.last() {
            print!("{}", last.stdout);
            for art in &last.artifacts {
                eprintln!("artifact {} -> {}", art.name, art.path.display());
            }
        }
        eprintln!("stopped: {:?}", outcome.stop);
    }
    Ok(if outcome.resolved { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn interpret(kind: InterpretKind, file: &Path, json: bool) -> CliResult {
    let text = std::fs::read_to_string(file)?;
    let input = match kind {
        InterpretKind::Flowmon => InterpretInput::Flows(parse_flowmonitor(&text)?),
        InterpretKind::Log => {
            let log = parse_event_log(&text);
            if log.events.is_empty() {
                return Err(format!("{}: no recognizable event lines", file.display()).into());
            }
            InterpretInput::Timeline(log.events)
        }
    };
    let report = summarize(&input, SummaryStyle::Template, None);
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}", report.text);
    }
    Ok(ExitCode::SUCCESS)
}

fn ingest(dir: &Path, index_path: &Path) -> CliResult {
    let mut index = if index_path.exists() {
        KnowledgeIndex::load(index_path)?
    } else {
        KnowledgeIndex::default()
    };
    for (doc, chunks) in index.ingest_dir(dir)? {
        eprintln!("{doc}: {chunks} chunks");
    }
    index.save(index_path)?;
    println!("{} documents, {} chunks", index.doc_count(), index.chunk_count());
    Ok(ExitCode::SUCCESS)
}

fn search(query: &str, k: usize, index_path: Option<&Path>) -> CliResult {
    let index = match index_path {
        Some(p) => KnowledgeIndex::load(p)?,
        None => ServiceConfig::from_env()?.index()?,
    };
    let hits = index.query(query, k)?;
    for (hit, chunk) in hits.iter().zip(index.resolve(&hits)) {
        println!("{:.4}\t{}", hit.score, hit.chunk_id);
        println!("\t{}", chunk.text.split_whitespace().take(24).collect::<Vec<_>>().join(" "));
    }
    Ok(ExitCode::SUCCESS)
}
