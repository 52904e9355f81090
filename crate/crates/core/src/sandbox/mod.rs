//! Manifest-driven project runs.
//!
//! `build_image` snapshots a work directory into an immutable staged tree
//! keyed by its digest. `run_container` executes the manifest entrypoint in a
//! private copy of that tree with a cleared environment, then digests the
//! declared outputs so two runs can be compared for reproducibility.
//!
//! The manifest `volume` is the root path the project believes it runs
//! under. The real path of the run copy is exposed as `HPCFAIR_ROOT`, the
//! logical one as `HPCFAIR_VOLUME`, and entrypoint arguments that start with
//! the volume path are rewritten to point into the run copy.

mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::{SecondsFormat, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::digest::{sha256_hex, HexHasher};
use crate::tasks::{TaskConfig, TaskContext, TaskError, TaskLog};

pub use manifest::{check_relative_path, parse_manifest, SandboxManifest};

/// Search path given to every entrypoint.
pub const BASELINE_PATH: &str = "/usr/local/bin:/usr/bin:/bin";

const LOG_LIMIT: usize = 64 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("path {0:?} escapes the project root")]
    PathEscape(String),
    #[error("work_dir {0} does not exist")]
    MissingWorkDir(String),
    #[error("declared input {0} is missing")]
    MissingInput(String),
    #[error("entrypoint program {0:?} not found")]
    EntrypointNotFound(String),
    #[error("{path} is not a regular file or directory")]
    Unsupported { path: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl SandboxError {
    pub fn code(&self) -> &'static str {
        match self {
            SandboxError::Malformed(_) => "malformed_manifest",
            SandboxError::Invalid(_) => "invalid_manifest",
            SandboxError::PathEscape(_) => "path_escape",
            SandboxError::MissingWorkDir(_) => "missing_work_dir",
            SandboxError::MissingInput(_) => "missing_input",
            SandboxError::EntrypointNotFound(_) => "entrypoint_not_found",
            SandboxError::Unsupported { .. } => "unsupported_file",
            SandboxError::Io { .. } => "io_error",
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SandboxError + '_ {
    move |e| SandboxError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct TreeFile {
    path: String,
    bytes: Vec<u8>,
    mode: u32,
}

#[cfg(unix)]
fn file_mode(meta: &fs::Metadata) -> u32 {
    use std::os::unix::fs::PermissionsExt;
    meta.permissions().mode()
}

#[cfg(not(unix))]
fn file_mode(_: &fs::Metadata) -> u32 {
    0o644
}

#[cfg(unix)]
fn set_mode(path: &Path, mode: u32) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(mode))
}

#[cfg(not(unix))]
fn set_mode(_: &Path, _: u32) -> std::io::Result<()> {
    Ok(())
}

/// Regular files under `root`, sorted by `/`-joined relative path. Entries
/// under `skip` are ignored.
fn read_tree(root: &Path, skip: Option<&Path>) -> Result<Vec<TreeFile>, SandboxError> {
    let mut files = Vec::new();
    let walker = WalkDir::new(root).follow_links(false).sort_by_file_name().into_iter();
    let walker = walker.filter_entry(|e| skip.is_none_or(|s| fs::canonicalize(e.path()).map_or(true, |p| !p.starts_with(s))));
    for entry in walker {
        let entry = entry.map_err(|e| SandboxError::Io { path: root.display().to_string(), message: e.to_string() })?;
        let ft = entry.file_type();
        if ft.is_dir() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if !ft.is_file() {
            return Err(SandboxError::Unsupported { path: rel });
        }
        let meta = entry.metadata().map_err(|e| SandboxError::Io { path: rel.clone(), message: e.to_string() })?;
        let bytes = fs::read(entry.path()).map_err(io_err(entry.path()))?;
        files.push(TreeFile { path: rel, bytes, mode: file_mode(&meta) });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

fn write_tree(files: &[TreeFile], dest: &Path) -> Result<(), SandboxError> {
    for f in files {
        let path = dest.join(&f.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, &f.bytes).map_err(io_err(&path))?;
        set_mode(&path, f.mode).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Digest over `(path, bytes)` pairs in path order, then the manifest.
/// Each piece is length-prefixed so boundaries cannot shift.
pub fn image_digest<'a>(files: impl IntoIterator<Item = (&'a str, &'a [u8])>, manifest: &SandboxManifest) -> String {
    let mut pairs: Vec<(&str, &[u8])> = files.into_iter().collect();
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    let mut h = HexHasher::new();
    for (path, bytes) in pairs {
        h.update_framed(path.as_bytes());
        h.update_framed(bytes);
    }
    h.update_framed(&manifest.canonical_bytes());
    h.finish()
}

/// Combined digest of several files: SHA-256 over each file's hex SHA-256
/// followed by a newline, in the given order.
pub fn files_digest<'a>(contents: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = HexHasher::new();
    for c in contents {
        h.update(sha256_hex(c).as_bytes());
        h.update(b"\n");
    }
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub build_tag: String,
    pub image_digest: String,
    pub staged_root: PathBuf,
    pub manifest: SandboxManifest,
}

impl ImageRecord {
    /// Recomputes the digest from the staged tree.
    pub fn current_digest(&self) -> Result<String, SandboxError> {
        let files = read_tree(&self.staged_root, None)?;
        Ok(image_digest(files.iter().map(|f| (f.path.as_str(), f.bytes.as_slice())), &self.manifest))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub build_tag: String,
    pub image_digest: String,
    pub started_at: String,
    pub device: String,
    pub input_digest: String,
    /// Absent when a declared output was not produced.
    pub output_digest: Option<String>,
    pub output_files: Vec<FileDigest>,
    pub missing_outputs: Vec<String>,
    pub exit_status: i32,
    pub captured_log: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ContainerRun {
    pub record: RunRecord,
    /// Declared outputs that were produced, in manifest order.
    pub outputs: Vec<(String, Vec<u8>)>,
}

static LEDGER_LOCK: Mutex<()> = Mutex::new(());

/// Staged images under `<root>/images`, run copies under `<root>/runs`, and
/// the run ledger `<root>/runs.log`.
#[derive(Clone, Debug)]
pub struct Sandbox {
    root: PathBuf,
}

impl Sandbox {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Sandbox { root: root.into() }
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join("runs.log")
    }

    pub fn build_image(&self, manifest: &SandboxManifest, work_dir: &Path) -> Result<ImageRecord, SandboxError> {
        manifest.check()?;
        if !work_dir.is_dir() {
            return Err(SandboxError::MissingWorkDir(work_dir.display().to_string()));
        }
        let images = self.root.join("images");
        fs::create_dir_all(&images).map_err(io_err(&images))?;
        let skip = fs::canonicalize(&self.root).ok();
        let files = read_tree(work_dir, skip.as_deref())?;
        let present: BTreeSet<&str> = files.iter().map(|f| f.path.as_str()).collect();
        if let Some(missing) = manifest.inputs.iter().find(|i| !present.contains(i.as_str())) {
            return Err(SandboxError::MissingInput(missing.clone()));
        }
        let digest = image_digest(files.iter().map(|f| (f.path.as_str(), f.bytes.as_slice())), manifest);
        let staged_root = images.join(&digest);
        if !staged_root.is_dir() {
            let tmp = tempfile::Builder::new().prefix(".stage-").tempdir_in(&images).map_err(io_err(&images))?;
            write_tree(&files, tmp.path())?;
            let tmp_path = tmp.keep();
            if fs::rename(&tmp_path, &staged_root).is_err() {
                // Another build staged the same digest first.
                let _ = fs::remove_dir_all(&tmp_path);
                if !staged_root.is_dir() {
                    return Err(SandboxError::Io { path: staged_root.display().to_string(), message: "cannot stage image".into() });
                }
            }
        }
        Ok(ImageRecord { build_tag: manifest.build_tag.clone(), image_digest: digest, staged_root, manifest: manifest.clone() })
    }

    fn find_program(&self, program: &str, run_root: &Path) -> Result<PathBuf, SandboxError> {
        if program.contains('/') {
            let p = if Path::new(program).is_absolute() { PathBuf::from(program) } else { run_root.join(program) };
            return if p.is_file() { Ok(p) } else { Err(SandboxError::EntrypointNotFound(program.to_string())) };
        }
        BASELINE_PATH
            .split(':')
            .map(|d| Path::new(d).join(program))
            .find(|p| p.is_file())
            .ok_or_else(|| SandboxError::EntrypointNotFound(program.to_string()))
    }

    /// Runs the image entrypoint in a fresh copy of the staged tree. A
    /// nonzero exit or a missing output is recorded, not returned as an error.
    pub fn run_container(
        &self,
        image: &ImageRecord,
        overrides: Option<&BTreeMap<String, Vec<u8>>>,
        device: &str,
    ) -> Result<ContainerRun, SandboxError> {
        let m = &image.manifest;
        let runs = self.root.join("runs");
        fs::create_dir_all(&runs).map_err(io_err(&runs))?;
        let copy = tempfile::Builder::new().prefix("run-").tempdir_in(&runs).map_err(io_err(&runs))?;
        let root = copy.path();
        write_tree(&read_tree(&image.staged_root, None)?, root)?;
        for (path, bytes) in overrides.into_iter().flatten() {
            check_relative_path(path)?;
            let dest = root.join(path);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&dest, bytes).map_err(io_err(&dest))?;
        }
        let mut input_bytes = Vec::with_capacity(m.inputs.len());
        for i in &m.inputs {
            input_bytes.push(fs::read(root.join(i)).map_err(|_| SandboxError::MissingInput(i.clone()))?);
        }
        let input_digest = files_digest(input_bytes.iter().map(Vec::as_slice));

        let argv = m.argv();
        let program = self.find_program(argv[0], root)?;
        let real_root = root.display().to_string();
        let args: Vec<String> = argv[1..]
            .iter()
            .map(|a| match a.strip_prefix(m.volume.trim_end_matches('/')) {
                Some(rest) if rest.is_empty() || rest.starts_with('/') => format!("{real_root}{rest}"),
                _ => a.to_string(),
            })
            .collect();
        let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);
        let output = Command::new(&program)
            .args(&args)
            .current_dir(root)
            .env_clear()
            .envs(&m.env)
            .env("PATH", BASELINE_PATH)
            .env("HOME", root)
            .env("LANG", "C")
            .env("HPCFAIR_ROOT", root)
            .env("HPCFAIR_VOLUME", &m.volume)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => SandboxError::EntrypointNotFound(argv[0].to_string()),
                _ => SandboxError::Io { path: argv[0].to_string(), message: e.to_string() },
            })?;

        let mut outputs = Vec::new();
        let mut missing = Vec::new();
        let mut output_files = Vec::new();
        for o in &m.outputs {
            match fs::read(root.join(o)) {
                Ok(bytes) => {
                    output_files.push(FileDigest { path: o.clone(), sha256: sha256_hex(&bytes) });
                    outputs.push((o.clone(), bytes));
                }
                Err(_) => missing.push(o.clone()),
            }
        }
        let output_digest = missing.is_empty().then(|| files_digest(outputs.iter().map(|(_, b)| b.as_slice())));
        let mut captured = String::from_utf8_lossy(&output.stdout).into_owned();
        captured.push_str(&String::from_utf8_lossy(&output.stderr));
        if captured.len() > LOG_LIMIT {
            let mut cut = LOG_LIMIT;
            while !captured.is_char_boundary(cut) {
                cut -= 1;
            }
            captured.truncate(cut);
        }
        let exit_status = output.status.code().unwrap_or(-1);
        let error = if !missing.is_empty() {
            Some(format!("missing_output: declared output(s) not produced: {}", missing.join(", ")))
        } else if exit_status != 0 {
            Some(format!("nonzero_exit: entrypoint exited with status {exit_status}"))
        } else {
            None
        };
        let record = RunRecord {
            run_id: format!("run-{}", hex::encode(rand::random::<[u8; 8]>())),
            build_tag: image.build_tag.clone(),
            image_digest: image.image_digest.clone(),
            started_at,
            device: device.to_string(),
            input_digest,
            output_digest,
            output_files,
            missing_outputs: missing,
            exit_status,
            captured_log: captured,
            error,
        };
        self.append_ledger(&record)?;
        Ok(ContainerRun { record, outputs })
    }

    fn append_ledger(&self, record: &RunRecord) -> Result<(), SandboxError> {
        let path = self.ledger_path();
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        let _guard = LEDGER_LOCK.lock();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(&line).map_err(io_err(&path))
    }

    /// Every run recorded in the ledger, oldest first.
    pub fn runs(&self) -> Result<Vec<RunRecord>, SandboxError> {
        let path = self.ledger_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| SandboxError::Io { path: path.display().to_string(), message: e.to_string() }))
            .collect()
    }
}

fn stage(stage: &'static str) -> impl Fn(SandboxError) -> TaskError {
    move |e| TaskError::Stage { stage, code: e.code(), message: e.to_string() }
}

/// Parses the build manifest, builds the image from `work_dir`, runs it and
/// copies the first declared output to the export file.
pub fn run_container_task(cfg: &TaskConfig, ctx: &TaskContext, log: &mut TaskLog) -> Result<Vec<String>, TaskError> {
    let backend = cfg.general.backend.as_ref().and_then(|b| b.single()).unwrap_or_default();
    if backend != "mlcube" {
        return Err(TaskError::UnknownBackend { task: "container", backend: backend.to_string(), expected: "\"mlcube\"" });
    }
    let t = &cfg.task_args;
    let build_file = t.build_file.as_deref().ok_or_else(|| TaskError::InvalidConfig(vec!["container requires task_args.build_file".into()]))?;
    let work_dir = t.work_dir.as_deref().ok_or_else(|| TaskError::InvalidConfig(vec!["container requires task_args.work_dir".into()]))?;
    let export = cfg.out.export_file.as_ref().and_then(|e| e.single()).ok_or_else(|| {
        TaskError::InvalidConfig(vec!["container takes exactly one out_args.export_file".into()])
    })?;
    let export_path = ctx.resolve(export)?;

    let bytes = ctx.read_source(build_file).map_err(|e| TaskError::Stage { stage: "parse_manifest", code: "read_error", message: e.to_string() })?;
    let mut manifest = parse_manifest(&bytes).map_err(stage("parse_manifest"))?;
    if let Some(tag) = &t.build_tag {
        manifest.build_tag = tag.clone();
    }
    if let Some(volume) = &t.volume {
        manifest.volume = volume.clone();
    }
    manifest.check().map_err(stage("parse_manifest"))?;
    if manifest.outputs.is_empty() {
        return Err(stage("parse_manifest")(SandboxError::Invalid("manifest declares no outputs".into())));
    }

    let sandbox = Sandbox::new(&ctx.state_dir);
    let dir = ctx.resolve(work_dir)?;
    if !dir.is_dir() {
        return Err(stage("build_image")(SandboxError::MissingWorkDir(work_dir.to_string())));
    }
    let image = sandbox.build_image(&manifest, &dir).map_err(stage("build_image"))?;
    log.info(format!("built image {} ({})", image.build_tag, image.image_digest));

    let device = cfg.device.device.clone().unwrap_or_else(|| "cpu".into());
    let run = sandbox.run_container(&image, None, &device).map_err(stage("run_container"))?;
    log.info(format!("run record: {}", serde_json::to_string(&run.record).expect("record serializes")));
    if let Some(err) = &run.record.error {
        let code = if run.record.missing_outputs.is_empty() { "nonzero_exit" } else { "missing_output" };
        return Err(TaskError::Stage { stage: "run_container", code, message: err.clone() });
    }
    let (_, first) = &run.outputs[0];
    ctx.write_output(&export_path, first, export)?;
    log.info(format!("copied {} to {export}", manifest.outputs[0]));
    Ok(vec![export_path.display().to_string()])
}
