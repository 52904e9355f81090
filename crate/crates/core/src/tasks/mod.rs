//! Task configuration documents and the dispatcher.
//!
//! A document has four sections: `general_args`, `device_args`, `task_args`
//! (also accepted as `model_args`) and `out_args`. [`Dispatcher`] validates
//! a parsed [`TaskConfig`], routes it to the conversion, inference or
//! container runner, and records the outcome in a [`TaskResult`].

mod config;
pub mod syntax;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converters::ConvertError;
use crate::interchange::GraphError;
use crate::runtime::ExecError;

pub use config::{
    validate_config, DeviceArgs, Extra, GeneralArgs, OneOrMany, OutArgs, TaskArgs, TaskConfig, TaskKind, TaskSectionName,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing {0} section")]
    MissingSection(&'static str),
    #[error("missing {0}")]
    MissingKey(&'static str),
    #[error("both task_args and model_args are present")]
    BothTaskSections,
    #[error("{key} must be {expected}")]
    Type { key: String, expected: String },
}

/// Parses a configuration document.
pub fn parse_config(text: &[u8]) -> Result<TaskConfig, ConfigError> {
    TaskConfig::parse(text)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("unknown backend {backend:?} for {task} (expected {expected})")]
    UnknownBackend { task: &'static str, backend: String, expected: &'static str },
    #[error("aligned sequences differ in length: {0}")]
    Alignment(String),
    #[error("{0}")]
    Arity(String),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("path {0:?} leaves the task directory")]
    PathEscape(String),
    #[error("export path {0} is claimed by another task")]
    Collision(String),
    #[error("export path {0} is listed more than once")]
    DuplicateExport(String),
    #[error("{path}: {source}")]
    Convert { path: String, source: ConvertError },
    #[error("{path}: {source}")]
    Model { path: String, source: GraphError },
    #[error("composition failed: {0}")]
    Compose(GraphError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, code: &'static str, message: String },
    #[error("{reference}: {message}")]
    Artifact { reference: String, code: String, message: String },
}

impl TaskError {
    pub fn code(&self) -> &str {
        match self {
            TaskError::InvalidConfig(_) => "invalid_config",
            TaskError::UnknownBackend { .. } => "unknown_backend",
            TaskError::Alignment(_) => "alignment_error",
            TaskError::Arity(_) => "arity_error",
            TaskError::Read { .. } => "read_error",
            TaskError::Write { .. } => "write_error",
            TaskError::PathEscape(_) => "path_escape",
            TaskError::Collision(_) => "export_collision",
            TaskError::DuplicateExport(_) => "duplicate_export",
            TaskError::Convert { source, .. } => source.code(),
            TaskError::Model { source, .. } => source.code(),
            TaskError::Compose(e) => e.code(),
            TaskError::Exec(e) => e.code(),
            TaskError::Stage { code, .. } => code,
            TaskError::Artifact { code, .. } => code,
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            TaskError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub fn info(&self) -> TaskErrorInfo {
        TaskErrorInfo { code: self.code().to_string(), message: self.to_string(), stage: self.stage().map(str::to_string) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskErrorInfo {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub at: String,
    pub message: String,
}

/// Timestamped messages collected while a task runs.
#[derive(Clone, Debug, Default)]
pub struct TaskLog {
    entries: Vec<LogEntry>,
}

impl TaskLog {
    pub fn info(&mut self, message: impl Into<String>) {
        let message = message.into();
        tracing::info!(target: "hpcfair::tasks", "{message}");
        self.entries.push(LogEntry { at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true), message });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<LogEntry> {
        self.entries
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub status: TaskStatus,
    pub outputs: Vec<String>,
    pub log: Vec<LogEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TaskErrorInfo>,
}

impl TaskResult {
    pub fn running(task_id: impl Into<String>) -> Self {
        TaskResult { task_id: task_id.into(), status: TaskStatus::Running, outputs: Vec::new(), log: Vec::new(), error: None }
    }

    fn finish(task_id: String, log: TaskLog, outcome: Result<Vec<String>, TaskError>) -> Self {
        match outcome {
            Ok(outputs) if !outputs.is_empty() => {
                TaskResult { task_id, status: TaskStatus::Succeeded, outputs, log: log.into_entries(), error: None }
            }
            Ok(_) => Self::failed(task_id, log, &TaskError::Arity("task produced no outputs".into())),
            Err(e) => Self::failed(task_id, log, &e),
        }
    }

    fn failed(task_id: String, mut log: TaskLog, e: &TaskError) -> Self {
        log.info(format!("failed: {e}"));
        TaskResult { task_id, status: TaskStatus::Failed, outputs: Vec::new(), log: log.into_entries(), error: Some(e.info()) }
    }

    pub fn succeeded(&self) -> bool {
        self.status == TaskStatus::Succeeded
    }
}

/// Loads bytes for a `pid:` model reference.
pub type ArtifactResolver = Arc<dyn Fn(&str) -> Result<Vec<u8>, TaskError> + Send + Sync>;

/// Where a task reads and writes.
#[derive(Clone)]
pub struct TaskContext {
    /// Relative config paths resolve against this directory.
    pub base_dir: PathBuf,
    /// Reject absolute paths and `..` components in configs.
    pub confine: bool,
    /// Staged images and the run ledger live here.
    pub state_dir: PathBuf,
    pub resolver: Option<ArtifactResolver>,
}

impl std::fmt::Debug for TaskContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskContext")
            .field("base_dir", &self.base_dir)
            .field("confine", &self.confine)
            .field("state_dir", &self.state_dir)
            .field("resolver", &self.resolver.is_some())
            .finish()
    }
}

/// Removes `.` components and folds `..` without touching the filesystem.
pub fn normalize_lexically(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

impl TaskContext {
    /// A context rooted at `base_dir`, keeping sandbox state under
    /// `base_dir/.hpcfair`.
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        let base_dir = base_dir.into();
        let base_dir = fs::canonicalize(&base_dir).unwrap_or(base_dir);
        let state_dir = base_dir.join(".hpcfair");
        TaskContext { base_dir, confine: false, state_dir, resolver: None }
    }

    pub fn confined(mut self) -> Self {
        self.confine = true;
        self
    }

    pub fn with_state_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.state_dir = dir.into();
        self
    }

    pub fn with_resolver(mut self, resolver: ArtifactResolver) -> Self {
        self.resolver = Some(resolver);
        self
    }

    pub fn resolve(&self, path: &str) -> Result<PathBuf, TaskError> {
        let p = Path::new(path);
        if self.confine && (p.is_absolute() || p.components().any(|c| c == Component::ParentDir)) {
            return Err(TaskError::PathEscape(path.to_string()));
        }
        Ok(normalize_lexically(&self.base_dir.join(p)))
    }

    /// Reads a file path or a `pid:<pid>` registry reference.
    pub fn read_source(&self, reference: &str) -> Result<Vec<u8>, TaskError> {
        if let Some(pid) = reference.strip_prefix("pid:") {
            let resolver = self.resolver.as_ref().ok_or_else(|| TaskError::Artifact {
                reference: reference.to_string(),
                code: "no_registry".into(),
                message: "no registry is attached to this task runner".into(),
            })?;
            return resolver(pid);
        }
        let path = self.resolve(reference)?;
        fs::read(&path).map_err(|e| TaskError::Read { path: reference.to_string(), message: e.to_string() })
    }

    /// Writes `bytes` to `path` through a temporary file and a rename, so a
    /// reader never sees a partial file.
    pub fn write_output(&self, path: &Path, bytes: &[u8], shown_as: &str) -> Result<(), TaskError> {
        let werr = |e: std::io::Error| TaskError::Write { path: shown_as.to_string(), message: e.to_string() };
        let parent = path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(werr)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(werr)?;
        tmp.write_all(bytes).map_err(werr)?;
        tmp.persist(path).map_err(|e| werr(e.error))?;
        Ok(())
    }
}

/// Runs `f` over `items` on at most `workers` threads and returns results
/// in input order.
pub fn run_bounded<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = items.len();
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return items.into_iter().map(f).collect();
    }
    let queue: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let item = queue[i].lock().take().expect("each index is taken once");
                *results[i].lock() = Some(f(item));
            });
        }
    });
    results.into_iter().map(|r| r.into_inner().expect("every index ran")).collect()
}

/// Routes validated configs to their runners.
pub struct Dispatcher {
    ctx: TaskContext,
    counter: AtomicU64,
    claims: Mutex<BTreeSet<PathBuf>>,
}

impl Dispatcher {
    pub fn new(ctx: TaskContext) -> Self {
        Dispatcher { ctx, counter: AtomicU64::new(0), claims: Mutex::new(BTreeSet::new()) }
    }

    pub fn context(&self) -> &TaskContext {
        &self.ctx
    }

    /// `task-<counter>-<config digest prefix>`, unique per dispatcher.
    pub fn next_task_id(&self, cfg: &TaskConfig) -> String {
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        format!("task-{n:06}-{}", &cfg.digest()[..8])
    }

    pub fn dispatch(&self, cfg: &TaskConfig) -> TaskResult {
        let id = self.next_task_id(cfg);
        self.run(id, cfg)
    }

    fn export_paths(&self, cfg: &TaskConfig) -> Result<Vec<PathBuf>, TaskError> {
        cfg.out.export_file.iter().flat_map(OneOrMany::to_vec).map(|p| self.ctx.resolve(&p)).collect()
    }

    /// Runs `cfg` under an id from [`next_task_id`](Self::next_task_id).
    pub fn run(&self, task_id: String, cfg: &TaskConfig) -> TaskResult {
        self.run_in(task_id, cfg, &self.ctx)
    }

    /// Like [`run`](Self::run) but resolves `pid:` references with
    /// `resolver`, typically one bound to the submitting caller's token.
    pub fn run_with_resolver(&self, task_id: String, cfg: &TaskConfig, resolver: ArtifactResolver) -> TaskResult {
        let ctx = self.ctx.clone().with_resolver(resolver);
        self.run_in(task_id, cfg, &ctx)
    }

    fn run_in(&self, task_id: String, cfg: &TaskConfig, ctx: &TaskContext) -> TaskResult {
        let mut log = TaskLog::default();
        let report = validate_config(cfg);
        if !report.ok {
            return TaskResult::failed(task_id, log, &TaskError::InvalidConfig(report.violations));
        }
        for w in &cfg.warnings {
            log.info(format!("warning: {w}"));
        }
        let exports = match self.export_paths(cfg) {
            Ok(p) => p,
            Err(e) => return TaskResult::failed(task_id, log, &e),
        };
        {
            let mut claims = self.claims.lock();
            if let Some(taken) = exports.iter().find(|p| claims.contains(*p)) {
                let e = TaskError::Collision(taken.display().to_string());
                return TaskResult::failed(task_id, log, &e);
            }
            claims.extend(exports.iter().cloned());
        }
        let kind = cfg.kind().expect("validated");
        log.info(format!("{task_id}: {kind} task started"));
        if cfg.device.device.as_deref() == Some("gpu") {
            log.info("executing on cpu (gpu unavailable in reference runtime)");
        }
        let outcome = match kind {
            TaskKind::Conversion => crate::converters::run_conversion_task(cfg, ctx, &mut log),
            TaskKind::Inference => crate::runtime::run_inference_task(cfg, ctx, &mut log).map(|p| vec![p]),
            TaskKind::Container => crate::sandbox::run_container_task(cfg, ctx, &mut log),
        };
        {
            let mut claims = self.claims.lock();
            for p in &exports {
                claims.remove(p);
            }
        }
        if outcome.is_ok() {
            log.info(format!("{task_id}: succeeded"));
        }
        TaskResult::finish(task_id, log, outcome)
    }

    /// Runs `configs` on at most `worker_num` threads. A config whose export
    /// path was already named by an earlier config in the batch fails with a
    /// collision and does not run.
    pub fn submit_many(&self, configs: &[TaskConfig], worker_num: usize) -> Vec<TaskResult> {
        let mut seen: BTreeSet<PathBuf> = BTreeSet::new();
        let jobs: Vec<(String, &TaskConfig, Option<TaskError>)> = configs
            .iter()
            .map(|cfg| {
                let id = self.next_task_id(cfg);
                let clash = match self.export_paths(cfg) {
                    Ok(paths) => {
                        let clash = paths.iter().find(|p| seen.contains(*p)).map(|p| TaskError::Collision(p.display().to_string()));
                        seen.extend(paths);
                        clash
                    }
                    Err(_) => None,
                };
                (id, cfg, clash)
            })
            .collect();
        run_bounded(jobs, worker_num, |(id, cfg, clash)| match clash {
            Some(e) => TaskResult::failed(id, TaskLog::default(), &e),
            None => self.run(id, cfg),
        })
    }
}
