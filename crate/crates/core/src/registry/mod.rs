//! Content-addressed artifact registry.
//!
//! Layout under the store root:
//!
//! ```text
//! blobs/<hh>/<sha256>   artifact bytes, keyed by digest with a 2-char fan-out
//! meta.log              one ArtifactRecord per line, append-only
//! tokens                one salted token hash per line, append-only
//! ```
//!
//! The in-memory index is rebuilt from `meta.log` and `tokens` on open.
//! Writes go through a single writer lock; reads only take the index read
//! lock and never wait on each other.

mod auth;
mod record;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, DurationRound, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converters::{convert_checkpoint, Backend};
use crate::digest::sha256_hex;
use crate::interchange::{parse_graph, serialize_graph};

pub use auth::{Credential, Principal, Role};
pub use record::{
    derive_pid, is_pid, normalize_tags, search_order, ArtifactDraft, ArtifactRecord, ArtifactType, ProvenanceEdge, ProvenanceOp,
    SearchQuery, PID_PREFIX,
};

use auth::{constant_time_eq, random_hex32, random_salt, salted_hash, TokenEntry};
use record::pid_from_hash;

/// IR version given to graphs converted at registration.
pub const DEFAULT_IR_VERSION: i64 = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("content already registered as {pid}")]
    Duplicate { pid: String },
    #[error("a bearer token is required")]
    MissingToken,
    #[error("unknown token")]
    UnknownToken,
    #[error("token expired at {0}")]
    TokenExpired(String),
    #[error("account {account} has role {role}; publisher is required")]
    Forbidden { account: String, role: Role },
    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),
    #[error("unknown pid {0}")]
    UnknownPid(String),
    #[error("stored content for {pid} does not match its digest")]
    Integrity { pid: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::Duplicate { .. } => "duplicate_content",
            RegistryError::MissingToken | RegistryError::UnknownToken => "unauthorized",
            RegistryError::TokenExpired(_) => "token_expired",
            RegistryError::Forbidden { .. } => "forbidden",
            RegistryError::InvalidArtifact(_) => "invalid_artifact",
            RegistryError::UnknownPid(_) => "unknown_pid",
            RegistryError::Integrity { .. } => "integrity_failure",
            RegistryError::InvalidQuery(_) => "invalid_query",
            RegistryError::Storage(_) => "storage_error",
        }
    }
}

fn storage(path: &Path) -> impl Fn(std::io::Error) -> RegistryError + '_ {
    move |e| RegistryError::Storage(format!("{}: {e}", path.display()))
}

/// Source of the current time.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock() = t;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

/// Outcome of a registration: the record and, for converted checkpoints,
/// the companion interchange record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub record: ArtifactRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion: Option<ArtifactRecord>,
}

impl Registration {
    pub fn records(&self) -> impl Iterator<Item = &ArtifactRecord> {
        std::iter::once(&self.record).chain(&self.companion)
    }
}

#[derive(Default)]
struct Index {
    records: BTreeMap<String, ArtifactRecord>,
    by_hash: HashMap<String, String>,
    tokens: Vec<TokenEntry>,
}

impl Index {
    fn insert(&mut self, r: ArtifactRecord) {
        self.by_hash.insert(r.content_hash.clone(), r.pid.clone());
        self.records.insert(r.pid.clone(), r);
    }
}

/// Parses one `meta.log` line and checks that its pid matches its digest.
pub fn parse_meta_line(line: &str) -> Result<ArtifactRecord, RegistryError> {
    let r: ArtifactRecord = serde_json::from_str(line).map_err(|e| RegistryError::Storage(format!("bad meta.log record: {e}")))?;
    let hash_ok = r.content_hash.len() == 64 && r.content_hash.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
    if !hash_ok || r.pid != pid_from_hash(&r.content_hash) {
        return Err(RegistryError::Storage(format!("meta.log record {} does not match its content hash", r.pid)));
    }
    Ok(r)
}

/// Reads a record-per-line file. A final line without a newline is a torn
/// append and is skipped.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, RegistryError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(storage(path)(e)),
    };
    let complete = if text.ends_with('\n') { text.as_str() } else { &text[..text.rfind('\n').map_or(0, |i| i + 1)] };
    if complete.len() != text.len() {
        tracing::warn!("skipping torn final line in {}", path.display());
    }
    Ok(complete.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l.to_string())).collect())
}

pub struct Registry {
    root: PathBuf,
    clock: Arc<dyn Clock>,
    ir_version: i64,
    writer: Mutex<()>,
    index: RwLock<Index>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("root", &self.root).finish_non_exhaustive()
    }
}

impl Registry {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        Self::open_with_clock(root, Arc::new(SystemClock))
    }

    pub fn open_with_clock(root: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, RegistryError> {
        let root = root.into();
        let blobs = root.join("blobs");
        fs::create_dir_all(&blobs).map_err(storage(&blobs))?;
        let mut index = Index::default();
        let meta = root.join("meta.log");
        for (n, line) in read_lines(&meta)? {
            let r = parse_meta_line(&line).map_err(|e| RegistryError::Storage(format!("meta.log line {n}: {e}")))?;
            if index.by_hash.contains_key(&r.content_hash) {
                return Err(RegistryError::Storage(format!("meta.log line {n}: duplicate record {}", r.pid)));
            }
            index.insert(r);
        }
        let tokens = root.join("tokens");
        for (n, line) in read_lines(&tokens)? {
            let t: TokenEntry =
                serde_json::from_str(&line).map_err(|e| RegistryError::Storage(format!("tokens line {n}: {e}")))?;
            index.tokens.push(t);
        }
        Ok(Registry { root, clock, ir_version: DEFAULT_IR_VERSION, writer: Mutex::new(()), index: RwLock::new(index) })
    }

    pub fn with_ir_version(mut self, v: i64) -> Self {
        self.ir_version = v;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn now(&self) -> DateTime<Utc> {
        let t = self.clock.now();
        t.duration_trunc(Duration::seconds(1)).unwrap_or(t)
    }

    pub fn blob_path(&self, hash: &str) -> PathBuf {
        self.root.join("blobs").join(&hash[..2]).join(hash)
    }

    fn append(&self, file: &str, lines: &[String]) -> Result<(), RegistryError> {
        let path = self.root.join(file);
        let mut buf = String::new();
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(storage(&path))?;
        f.write_all(buf.as_bytes()).map_err(storage(&path))?;
        f.sync_data().map_err(storage(&path))
    }

    fn write_blob(&self, hash: &str, bytes: &[u8]) -> Result<(), RegistryError> {
        let path = self.blob_path(hash);
        if path.is_file() {
            return Ok(());
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir).map_err(storage(dir))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(storage(dir))?;
        tmp.write_all(bytes).map_err(storage(&path))?;
        tmp.as_file().sync_data().map_err(storage(&path))?;
        tmp.persist(&path).map_err(|e| storage(&path)(e.error))?;
        Ok(())
    }

    /// Issues a token with 256 random bits. Only the salted hash is stored.
    pub fn issue_token(&self, account: &str, role: Role, ttl_secs: u64) -> Result<Credential, RegistryError> {
        if account.trim().is_empty() {
            return Err(RegistryError::InvalidArtifact("account must be non-empty".into()));
        }
        let ttl = i64::try_from(ttl_secs).ok().and_then(Duration::try_seconds).ok_or_else(|| RegistryError::InvalidQuery("ttl too large".into()))?;
        let _w = self.writer.lock();
        let token = random_hex32();
        let salt = random_salt();
        let expires_at = self.now() + ttl;
        let entry = TokenEntry { account: account.to_string(), role, hash: salted_hash(&salt, &token), salt, expires_at };
        self.append("tokens", &[serde_json::to_string(&entry).expect("entry serializes")])?;
        self.index.write().tokens.push(entry);
        Ok(Credential { token, account: account.to_string(), role, expires_at })
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal, RegistryError> {
        let index = self.index.read();
        let entry = index
            .tokens
            .iter()
            .find(|e| constant_time_eq(&salted_hash(&e.salt, token), &e.hash))
            .ok_or(RegistryError::UnknownToken)?;
        if self.clock.now() >= entry.expires_at {
            return Err(RegistryError::TokenExpired(record::timestamp_string(&entry.expires_at)));
        }
        Ok(Principal { account: entry.account.clone(), role: entry.role })
    }

    fn principal(&self, token: Option<&str>) -> Result<Principal, RegistryError> {
        self.authenticate(token.ok_or(RegistryError::MissingToken)?)
    }

    fn check_content(&self, content: &[u8], draft: &ArtifactDraft) -> Result<(), RegistryError> {
        match (draft.artifact_type, draft.backend_tag.as_str()) {
            (ArtifactType::Model, "onnx") => {
                let g = parse_graph(content).map_err(|e| RegistryError::InvalidArtifact(e.to_string()))?;
                g.validate().into_result().map_err(|e| RegistryError::InvalidArtifact(e.to_string()))
            }
            (ArtifactType::ContainerManifest, _) => {
                crate::sandbox::parse_manifest(content).map(|_| ()).map_err(|e| RegistryError::InvalidArtifact(e.to_string()))
            }
            _ => Ok(()),
        }
    }

    /// Stores `content` with `draft` metadata. A `pt` or `tf` model is also
    /// converted and stored as a companion interchange artifact; if that
    /// fails, nothing is stored.
    pub fn register_artifact(
        &self,
        content: &[u8],
        draft: ArtifactDraft,
        token: Option<&str>,
    ) -> Result<Registration, RegistryError> {
        let who = self.principal(token)?;
        if who.role != Role::Publisher {
            return Err(RegistryError::Forbidden { account: who.account, role: who.role });
        }
        if draft.title.trim().is_empty() {
            return Err(RegistryError::InvalidArtifact("title must be non-empty".into()));
        }
        if draft.backend_tag.trim().is_empty() {
            return Err(RegistryError::InvalidArtifact("backend_tag must be non-empty".into()));
        }
        if draft.version == 0 {
            return Err(RegistryError::InvalidArtifact("version must be positive".into()));
        }
        self.check_content(content, &draft)?;

        let _w = self.writer.lock();
        let hash = sha256_hex(content);
        {
            let index = self.index.read();
            if let Some(pid) = index.by_hash.get(&hash) {
                return Err(RegistryError::Duplicate { pid: pid.clone() });
            }
            if let Some(p) = draft.provenance.iter().find(|p| !index.records.contains_key(&p.parent_pid)) {
                return Err(RegistryError::InvalidArtifact(format!("provenance parent {} is not registered", p.parent_pid)));
            }
        }
        let created_at = self.now();
        let record = ArtifactRecord {
            pid: pid_from_hash(&hash),
            title: draft.title.trim().to_string(),
            artifact_type: draft.artifact_type,
            backend_tag: draft.backend_tag.trim().to_string(),
            version: draft.version,
            tags: normalize_tags(draft.tags.iter().map(String::as_str)),
            creator: who.account.clone(),
            license: draft.license.clone(),
            content_hash: hash.clone(),
            size_bytes: content.len() as u64,
            provenance: draft.provenance.clone(),
            created_at,
        };

        let companion = match (record.artifact_type, record.backend_tag.parse::<Backend>()) {
            (ArtifactType::Model, Ok(backend)) => {
                let g = convert_checkpoint(backend, content, &record.pid, self.ir_version)
                    .map_err(|e| RegistryError::InvalidArtifact(format!("automatic conversion failed: {e}")))?;
                let bytes = serialize_graph(&g);
                let chash = sha256_hex(&bytes);
                if let Some(pid) = self.index.read().by_hash.get(&chash) {
                    return Err(RegistryError::Duplicate { pid: pid.clone() });
                }
                let r = ArtifactRecord {
                    pid: pid_from_hash(&chash),
                    title: format!("{} (interchange)", record.title),
                    backend_tag: "onnx".into(),
                    content_hash: chash,
                    size_bytes: bytes.len() as u64,
                    provenance: vec![ProvenanceEdge { parent_pid: record.pid.clone(), operation: ProvenanceOp::ConvertedFrom }],
                    ..record.clone()
                };
                Some((r, bytes))
            }
            _ => None,
        };

        self.write_blob(&hash, content)?;
        let mut lines = vec![serde_json::to_string(&record).expect("record serializes")];
        if let Some((r, bytes)) = &companion {
            self.write_blob(&r.content_hash, bytes)?;
            lines.push(serde_json::to_string(r).expect("record serializes"));
        }
        self.append("meta.log", &lines)?;

        let companion = companion.map(|(r, _)| r);
        let mut index = self.index.write();
        index.insert(record.clone());
        if let Some(c) = &companion {
            index.insert(c.clone());
        }
        Ok(Registration { record, companion })
    }

    pub fn fetch_metadata(&self, pid: &str) -> Result<ArtifactRecord, RegistryError> {
        self.index.read().records.get(pid).cloned().ok_or_else(|| RegistryError::UnknownPid(pid.to_string()))
    }

    /// Returns the bytes after checking them against the recorded digest.
    pub fn fetch_content(&self, pid: &str, token: Option<&str>) -> Result<Vec<u8>, RegistryError> {
        self.principal(token)?;
        let record = self.fetch_metadata(pid)?;
        let bytes = fs::read(self.blob_path(&record.content_hash)).map_err(|_| RegistryError::Integrity { pid: pid.to_string() })?;
        if sha256_hex(&bytes) != record.content_hash {
            return Err(RegistryError::Integrity { pid: pid.to_string() });
        }
        Ok(bytes)
    }

    pub fn search(&self, q: &SearchQuery) -> Result<Vec<ArtifactRecord>, RegistryError> {
        if q.is_empty() {
            return Err(RegistryError::InvalidQuery("at least one filter is required".into()));
        }
        let q = SearchQuery { tags: normalize_tags(q.tags.iter().map(String::as_str)), ..q.clone() };
        let mut hits: Vec<ArtifactRecord> = self.index.read().records.values().filter(|r| q.matches(r)).cloned().collect();
        hits.sort_by(search_order);
        Ok(hits)
    }

    /// Every record in pid order.
    pub fn records(&self) -> Vec<ArtifactRecord> {
        self.index.read().records.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.index.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
