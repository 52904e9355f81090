use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use hpcfair::api::{router, serve, token_resolver, AppState, ServiceConfig};
use hpcfair::client::{ClientError, ModelApi, RawResponse};
use hpcfair_core::registry::{ArtifactDraft, ArtifactRecord, Registration, Registry, Role};
use hpcfair_core::tasks::{parse_config, Dispatcher, TaskContext, TaskKind, TaskResult};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "hpcfair", version, about = "FAIR artifact registry and task runner")]
struct Cli {
    /// Registry store directory for local mode.
    #[arg(long, global = true, env = "HPCFAIR_STORE", default_value = ".hpcfair-store")]
    store: PathBuf,
    /// Server address. Without it commands run in process against --store.
    #[arg(long, global = true, env = "HPCFAIR_ADDR")]
    addr: Option<String>,
    #[arg(long, global = true, env = "HPCFAIR_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Register an artifact.
    Push {
        /// JSON metadata document.
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        content: PathBuf,
    },
    /// Download artifact content, verifying its digest.
    Pull {
        pid: String,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an artifact's metadata.
    Show { pid: String },
    /// Conjunctive search over tags, type, backend and title.
    #[command(group(ArgGroup::new("filter").required(true).multiple(true)))]
    Search {
        /// Comma-separated tags, all of which must match.
        #[arg(long, group = "filter")]
        tags: Option<String>,
        #[arg(long = "type", group = "filter")]
        artifact_type: Option<String>,
        #[arg(long, group = "filter")]
        backend: Option<String>,
        #[arg(long, group = "filter")]
        title: Option<String>,
    },
    /// Run a task config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Credential administration on the local store.
    Token {
        #[command(subcommand)]
        cmd: TokenCmd,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Root for relative paths in submitted task configs.
        #[arg(long, default_value = ".")]
        workdir: PathBuf,
        /// Tasks allowed to run at once.
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

#[derive(Subcommand)]
enum TokenCmd {
    Issue {
        #[arg(long)]
        role: Role,
        #[arg(long)]
        account: String,
        /// Lifetime in seconds.
        #[arg(long, default_value_t = 86_400)]
        ttl: u64,
    },
}

struct Failure {
    code: String,
    message: String,
    body: Option<Vec<u8>>,
}

impl Failure {
    fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Failure { code: code.into(), message: message.into(), body: None }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let body = match &e {
            ClientError::Api { body, .. } => Some(serde_json::to_vec(body).expect("json value serializes")),
            ClientError::TaskFailed(r) => Some(task_envelope(r)),
            _ => None,
        };
        let message = match &e {
            ClientError::Api { message, .. } => message.clone(),
            ClientError::TaskFailed(r) => r.error.as_ref().map(|i| i.message.clone()).unwrap_or_default(),
            other => other.to_string(),
        };
        Failure { code: e.code().to_string(), message, body }
    }
}

fn envelope<T: Serialize>(data: &T) -> Vec<u8> {
    serde_json::to_vec(&json!({ "ok": true, "data": data })).expect("json value serializes")
}

fn task_envelope(r: &TaskResult) -> Vec<u8> {
    match &r.error {
        None => envelope(r),
        Some(e) => serde_json::to_vec(&json!({ "ok": false, "error": e, "data": r })).expect("json value serializes"),
    }
}

struct Session {
    api: ModelApi,
    format: Format,
}

fn emit(format: Format, json_body: &[u8], text: impl FnOnce() -> String) {
    let mut out = std::io::stdout().lock();
    let _ = match format {
        Format::Json => out.write_all(json_body).and_then(|_| out.write_all(b"\n")),
        Format::Text => writeln!(out, "{}", text()),
    };
}

impl Session {
    fn emit(&self, json_body: &[u8], text: impl FnOnce() -> String) {
        emit(self.format, json_body, text)
    }

    fn decode<T: serde::de::DeserializeOwned>(&self, raw: &RawResponse) -> Result<T, Failure> {
        raw.decode().map_err(|e| Failure { body: Some(raw.body.clone()), ..Failure::from(e) })
    }
}

fn record_line(r: &ArtifactRecord) -> String {
    let tags: Vec<&str> = r.tags.iter().map(String::as_str).collect();
    format!("{}\t{}\t{}\t{}\t{}", r.pid, r.artifact_type, r.backend_tag, r.title, tags.join(","))
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::new("file_not_found", format!("{}: {e}", path.display())))
}

async fn push(s: &Session, meta: &Path, content: &Path) -> Result<(), Failure> {
    let draft: ArtifactDraft = serde_json::from_slice(&read_file(meta)?)
        .map_err(|e| Failure::new("invalid_artifact", format!("{}: {e}", meta.display())))?;
    let raw = s.api.push_raw(&draft, &read_file(content)?).await?;
    let reg: Registration = s.decode(&raw)?;
    s.emit(&raw.body, || reg.records().map(record_line).collect::<Vec<_>>().join("\n"));
    Ok(())
}

async fn pull(s: &Session, pid: &str, out: Option<&Path>) -> Result<(), Failure> {
    let bytes = s.api.pull(pid).await?;
    match out {
        Some(path) => {
            std::fs::write(path, &bytes).map_err(|e| Failure::new("write_error", format!("{}: {e}", path.display())))?;
            let data = json!({ "pid": pid, "path": path, "size_bytes": bytes.len(), "sha256": hpcfair_core::digest::sha256_hex(&bytes) });
            s.emit(&envelope(&data), || path.display().to_string());
        }
        None => {
            let _ = std::io::stdout().lock().write_all(&bytes);
        }
    }
    Ok(())
}

async fn show(s: &Session, pid: &str) -> Result<(), Failure> {
    let raw = s.api.request("GET", &format!("/v1/artifacts/{pid}"), None, Vec::new()).await?;
    let r: ArtifactRecord = s.decode(&raw)?;
    s.emit(&raw.body, || serde_json::to_string_pretty(&r).expect("record serializes"));
    Ok(())
}

async fn search(s: &Session, params: &[(&str, &str)]) -> Result<(), Failure> {
    let raw = s.api.request("GET", &ModelApi::search_path(params), None, Vec::new()).await?;
    let found: Vec<ArtifactRecord> = s.decode(&raw)?;
    s.emit(&raw.body, || found.iter().map(record_line).collect::<Vec<_>>().join("\n"));
    Ok(())
}

fn run_local(cli: &Cli, config: &Path) -> Result<TaskResult, Failure> {
    let text = read_file(config)?;
    let cfg = parse_config(&text).map_err(|e| Failure::new("invalid_config", e.to_string()))?;
    let dir = config.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut ctx = TaskContext::new(dir);
    if let Some(token) = &cli.token {
        if cli.store.is_dir() {
            let reg = Registry::open(&cli.store).map_err(|e| Failure::new(e.code(), e.to_string()))?;
            ctx = ctx.with_resolver(token_resolver(Arc::new(reg), token.clone()));
        }
    }
    Ok(Dispatcher::new(ctx).dispatch(&cfg))
}

async fn run_remote(api: &ModelApi, config: &Path) -> Result<TaskResult, ClientError> {
    let kind = std::fs::read(config)
        .ok()
        .and_then(|t| parse_config(&t).ok())
        .and_then(|c| c.kind());
    match kind {
        Some(TaskKind::Conversion) => api.conversion(config).await,
        Some(TaskKind::Container) => api.container(config).await,
        _ => api.infer(config).await,
    }
}

async fn run(cli: &Cli, remote: Option<&ModelApi>, config: &Path) -> Result<(), Failure> {
    let result = match remote {
        Some(api) => match run_remote(api, config).await {
            Ok(r) => r,
            Err(ClientError::TaskFailed(r)) => *r,
            Err(e) => return Err(e.into()),
        },
        None => run_local(cli, config)?,
    };
    if let Some(e) = &result.error {
        return Err(Failure { code: e.code.clone(), message: e.message.clone(), body: Some(task_envelope(&result)) });
    }
    emit(cli.format, &task_envelope(&result), || result.outputs.join("\n"));
    Ok(())
}

fn issue_token(cli: &Cli, role: Role, account: &str, ttl: u64) -> Result<(), Failure> {
    let reg = Registry::open(&cli.store).map_err(|e| Failure::new(e.code(), e.to_string()))?;
    let cred = reg.issue_token(account, role, ttl).map_err(|e| Failure::new(e.code(), e.to_string()))?;
    let body = envelope(&cred);
    match cli.format {
        Format::Json => println!("{}", String::from_utf8_lossy(&body)),
        Format::Text => println!("{}", cred.token),
    }
    Ok(())
}

async fn serve_cmd(cli: &Cli, listen: &str, workdir: &Path, workers: usize) -> Result<(), Failure> {
    let mut cfg = ServiceConfig::new(&cli.store, workdir);
    cfg.workers = workers.max(1);
    let state = AppState::open(&cfg).map_err(|e| Failure::new(e.code(), e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(listen).await.map_err(|e| Failure::new("io_error", format!("{listen}: {e}")))?;
    let bound = listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| listen.to_string());
    tracing::info!(addr = %bound, store = %cli.store.display(), "listening");
    eprintln!("listening on {bound}");
    serve(listener, state).await.map_err(|e| Failure::new("io_error", e.to_string()))
}

fn session(cli: &Cli) -> Result<Session, Failure> {
    let api = match &cli.addr {
        Some(addr) => ModelApi::http(addr),
        None => {
            let cwd = std::env::current_dir().map_err(|e| Failure::new("io_error", e.to_string()))?;
            let state = AppState::open(&ServiceConfig::new(&cli.store, cwd)).map_err(|e| Failure::new(e.code(), e.to_string()))?;
            ModelApi::in_process(router(state))
        }
    };
    let api = match &cli.token {
        Some(t) => api.with_token(t),
        None => api,
    };
    Ok(Session { api, format: cli.format })
}

async fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Token { cmd: TokenCmd::Issue { role, account, ttl } } => issue_token(cli, *role, account, *ttl),
        Cmd::Serve { listen, workdir, workers } => serve_cmd(cli, listen, workdir, *workers).await,
        Cmd::Run { config } if cli.addr.is_none() => run(cli, None, config).await,
        cmd => {
            let s = session(cli)?;
            match cmd {
                Cmd::Push { meta, content } => push(&s, meta, content).await,
                Cmd::Pull { pid, out } => pull(&s, pid, out.as_deref()).await,
                Cmd::Show { pid } => show(&s, pid).await,
                Cmd::Search { tags, artifact_type, backend, title } => {
                    let params: Vec<(&str, &str)> = [("tags", tags), ("type", artifact_type), ("backend", backend), ("title", title)]
                        .into_iter()
                        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
                        .collect();
                    search(&s, &params).await
                }
                Cmd::Run { config } => run(cli, Some(&s.api), config).await,
                Cmd::Token { .. } | Cmd::Serve { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.cmd, Cmd::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: io_error: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if cli.format == Format::Json {
                let body = f.body.clone().unwrap_or_else(|| {
                    serde_json::to_vec(&json!({ "ok": false, "error": { "code": f.code, "message": f.message } })).expect("json value serializes")
                });
                println!("{}", String::from_utf8_lossy(&body));
            }
            eprintln!("error: {}: {}", f.code, f.message);
            ExitCode::from(1)
        }
    }
}
