//! Client for the `/v1` API.
//!
//! [`ModelApi`] speaks to a server over HTTP or to a [`Router`] held in the
//! same process. Each task verb is one call: it reads the config file,
//! submits it, polls until the task finishes and returns the result.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request};
use axum::Router;
use http_body_util::BodyExt;
use hpcfair_core::digest::sha256_hex;
use hpcfair_core::registry::{ArtifactDraft, ArtifactRecord, Registration};
use hpcfair_core::tasks::{parse_config, TaskConfig, TaskKind, TaskResult, TaskStatus};
use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;
use tower::ServiceExt;

use crate::api::DIGEST_HEADER;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot read config {path}: {message}")]
    ConfigNotFound { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    InvalidConfig { path: String, message: String },
    #[error("{verb} needs a {expected} config, {path} has task {found:?}")]
    WrongTask { verb: &'static str, expected: TaskKind, path: String, found: String },
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String, body: Value },
    #[error("task {} failed: {}", .0.task_id, .0.error.as_ref().map_or("", |e| e.message.as_str()))]
    TaskFailed(Box<TaskResult>),
    #[error("downloaded content does not match digest {expected}")]
    Integrity { expected: String },
    #[error("task {0} did not finish in time")]
    Timeout(String),
    #[error("transport: {0}")]
    Transport(String),
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::ConfigNotFound { .. } => "file_not_found",
            ClientError::InvalidConfig { .. } => "invalid_config",
            ClientError::WrongTask { .. } => "wrong_task",
            ClientError::Api { code, .. } => code,
            ClientError::TaskFailed(r) => r.error.as_ref().map_or("task_failed", |e| e.code.as_str()),
            ClientError::Integrity { .. } => "integrity_failure",
            ClientError::Timeout(_) => "timeout",
            ClientError::Transport(_) => "transport_error",
        }
    }
}

#[derive(Clone)]
pub enum Transport {
    InProcess(Router),
    Http { base: String, client: reqwest::Client },
}

/// A response before envelope decoding.
#[derive(Clone, Debug)]
pub struct RawResponse {
    pub status: u16,
    pub digest: Option<String>,
    pub body: Vec<u8>,
}

impl RawResponse {
    /// Decodes the `{"ok", "data" | "error"}` envelope.
    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, ClientError> {
        let v: Value = serde_json::from_slice(&self.body)
            .map_err(|e| ClientError::Transport(format!("status {}: undecodable body: {e}", self.status)))?;
        if v["ok"] == Value::Bool(true) {
            return serde_json::from_value(v["data"].clone()).map_err(|e| ClientError::Transport(e.to_string()));
        }
        Err(ClientError::Api {
            status: self.status,
            code: v["error"]["code"].as_str().unwrap_or("unknown_error").to_string(),
            message: v["error"]["message"].as_str().unwrap_or_default().to_string(),
            body: v,
        })
    }
}

pub struct ModelApi {
    transport: Transport,
    token: Option<String>,
    poll_interval: Duration,
    timeout: Duration,
    verbs: Mutex<Vec<&'static str>>,
}

fn multipart_body(metadata: &[u8], content: &[u8]) -> (String, Vec<u8>) {
    let boundary = loop {
        let b = format!("hpcfair-{}", hex_token());
        let needle = b.as_bytes();
        let clash = |hay: &[u8]| hay.windows(needle.len()).any(|w| w == needle);
        if !clash(metadata) && !clash(content) {
            break b;
        }
    };
    let mut body = Vec::with_capacity(metadata.len() + content.len() + 512);
    body.extend_from_slice(
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"metadata\"\r\nContent-Type: application/json\r\n\r\n").as_bytes(),
    );
    body.extend_from_slice(metadata);
    body.extend_from_slice(
        format!(
            "\r\n--{boundary}\r\nContent-Disposition: form-data; name=\"content\"; filename=\"content\"\r\nContent-Type: application/octet-stream\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(content);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

fn hex_token() -> String {
    use rand::Rng;
    rand::rng().random::<[u8; 12]>().iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelApi {
    pub fn in_process(router: Router) -> Self {
        Self::with_transport(Transport::InProcess(router))
    }

    pub fn http(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        let base = if base.contains("://") { base } else { format!("http://{base}") };
        Self::with_transport(Transport::Http { base, client: reqwest::Client::new() })
    }

    fn with_transport(transport: Transport) -> Self {
        ModelApi {
            transport,
            token: None,
            poll_interval: Duration::from_millis(10),
            timeout: Duration::from_secs(300),
            verbs: Mutex::new(Vec::new()),
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Task verbs invoked so far, in order.
    pub fn verb_calls(&self) -> Vec<&'static str> {
        self.verbs.lock().expect("verb log lock").clone()
    }

    pub async fn request(&self, method: &str, path: &str, content_type: Option<&str>, body: Vec<u8>) -> Result<RawResponse, ClientError> {
        let transport_err = |e: &dyn std::fmt::Display| ClientError::Transport(e.to_string());
        match &self.transport {
            Transport::InProcess(router) => {
                let mut req = Request::builder().method(method).uri(path);
                if let Some(t) = &self.token {
                    req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
                }
                if let Some(ct) = content_type {
                    req = req.header(header::CONTENT_TYPE, ct);
                }
                let req = req.body(Body::from(body)).map_err(|e| transport_err(&e))?;
                let resp = router.clone().oneshot(req).await.map_err(|e| transport_err(&e))?;
                let status = resp.status().as_u16();
                let digest = resp.headers().get(DIGEST_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
                let body = resp.into_body().collect().await.map_err(|e| transport_err(&e))?.to_bytes().to_vec();
                Ok(RawResponse { status, digest, body })
            }
            Transport::Http { base, client } => {
                let method = reqwest::Method::from_bytes(method.as_bytes()).map_err(|e| transport_err(&e))?;
                let mut req = client.request(method, format!("{base}{path}")).body(body);
                if let Some(t) = &self.token {
                    req = req.bearer_auth(t);
                }
                if let Some(ct) = content_type {
                    req = req.header(reqwest::header::CONTENT_TYPE, ct);
                }
                let resp = req.send().await.map_err(|e| transport_err(&e))?;
                let status = resp.status().as_u16();
                let digest = resp.headers().get(DIGEST_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
                let body = resp.bytes().await.map_err(|e| transport_err(&e))?.to_vec();
                Ok(RawResponse { status, digest, body })
            }
        }
    }

    pub async fn push_raw(&self, draft: &ArtifactDraft, content: &[u8]) -> Result<RawResponse, ClientError> {
        let meta = serde_json::to_vec(draft).expect("draft serializes");
        let (ct, body) = multipart_body(&meta, content);
        self.request("POST", "/v1/artifacts", Some(&ct), body).await
    }

    pub async fn push(&self, draft: &ArtifactDraft, content: &[u8]) -> Result<Registration, ClientError> {
        self.push_raw(draft, content).await?.decode()
    }

    pub async fn metadata(&self, pid: &str) -> Result<ArtifactRecord, ClientError> {
        self.request("GET", &format!("/v1/artifacts/{pid}"), None, Vec::new()).await?.decode()
    }

    /// Downloads content and checks it against the digest header.
    pub async fn pull(&self, pid: &str) -> Result<Vec<u8>, ClientError> {
        let raw = self.request("GET", &format!("/v1/artifacts/{pid}/content"), None, Vec::new()).await?;
        if raw.status != 200 {
            return raw.decode::<Value>().map(|_| Vec::new());
        }
        let expected = raw.digest.clone().unwrap_or_default();
        if sha256_hex(&raw.body) != expected {
            return Err(ClientError::Integrity { expected });
        }
        Ok(raw.body)
    }

    pub fn search_path(params: &[(&str, &str)]) -> String {
        let q: Vec<String> = params.iter().map(|(k, v)| format!("{k}={}", encode_query(v))).collect();
        format!("/v1/search?{}", q.join("&"))
    }

    pub async fn search(&self, params: &[(&str, &str)]) -> Result<Vec<ArtifactRecord>, ClientError> {
        self.request("GET", &Self::search_path(params), None, Vec::new()).await?.decode()
    }

    pub async fn submit(&self, config_text: &[u8]) -> Result<String, ClientError> {
        let v: Value = self.request("POST", "/v1/tasks", Some("text/plain; charset=utf-8"), config_text.to_vec()).await?.decode()?;
        v["task_id"].as_str().map(str::to_string).ok_or_else(|| ClientError::Transport("response has no task_id".into()))
    }

    pub async fn task(&self, id: &str) -> Result<TaskResult, ClientError> {
        self.request("GET", &format!("/v1/tasks/{id}"), None, Vec::new()).await?.decode()
    }

    /// Polls until the task leaves `running`.
    pub async fn wait(&self, id: &str) -> Result<TaskResult, ClientError> {
        let deadline = tokio::time::Instant::now() + self.timeout;
        loop {
            let r = self.task(id).await?;
            if r.status != TaskStatus::Running {
                return Ok(r);
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Timeout(id.to_string()));
            }
            tokio::time::sleep(self.poll_interval).await;
        }
    }

    async fn run_text(&self, text: &[u8]) -> Result<TaskResult, ClientError> {
        let id = self.submit(text).await?;
        let r = self.wait(&id).await?;
        if r.succeeded() {
            Ok(r)
        } else {
            Err(ClientError::TaskFailed(Box::new(r)))
        }
    }

    fn load(path: &Path, verb: &'static str, expected: TaskKind) -> Result<(Vec<u8>, TaskConfig), ClientError> {
        let shown = path.display().to_string();
        let text = std::fs::read(path).map_err(|e| ClientError::ConfigNotFound { path: shown.clone(), message: e.to_string() })?;
        let cfg = parse_config(&text).map_err(|e| ClientError::InvalidConfig { path: shown.clone(), message: e.to_string() })?;
        if cfg.kind() != Some(expected) {
            return Err(ClientError::WrongTask { verb, expected, path: shown, found: cfg.general.task });
        }
        Ok((text, cfg))
    }

    fn record(&self, verb: &'static str) {
        self.verbs.lock().expect("verb log lock").push(verb);
    }

    /// Converts the checkpoints listed in a conversion config.
    pub async fn conversion(&self, config: impl AsRef<Path>) -> Result<TaskResult, ClientError> {
        self.record("conversion");
        let (text, _) = Self::load(config.as_ref(), "conversion", TaskKind::Conversion)?;
        self.run_text(&text).await
    }

    /// Runs an inference config as-is.
    pub async fn infer(&self, config: impl AsRef<Path>) -> Result<TaskResult, ClientError> {
        self.record("infer");
        let (text, _) = Self::load(config.as_ref(), "infer", TaskKind::Inference)?;
        self.run_text(&text).await
    }

    /// Composes and runs the two models of an inference config. The
    /// `collaboration` tag is implied.
    pub async fn collaborate(&self, config: impl AsRef<Path>) -> Result<TaskResult, ClientError> {
        self.record("collaborate");
        let (text, mut cfg) = Self::load(config.as_ref(), "collaborate", TaskKind::Inference)?;
        if cfg.general.tag.as_deref() == Some("collaboration") {
            return self.run_text(&text).await;
        }
        cfg.general.tag = Some("collaboration".into());
        self.run_text(cfg.to_canonical_text().as_bytes()).await
    }

    /// Runs a conversion config, then a collaboration inference config.
    /// Returns the inference result.
    pub async fn collaborate_pair(&self, conversion: impl AsRef<Path>, inference: impl AsRef<Path>) -> Result<TaskResult, ClientError> {
        self.record("collaborate");
        let (conv, _) = Self::load(conversion.as_ref(), "collaborate", TaskKind::Conversion)?;
        let (_, mut inf) = Self::load(inference.as_ref(), "collaborate", TaskKind::Inference)?;
        inf.general.tag = Some("collaboration".into());
        self.run_text(&conv).await?;
        self.run_text(inf.to_canonical_text().as_bytes()).await
    }

    /// Builds and runs the project described by a container config.
    pub async fn container(&self, config: impl AsRef<Path>) -> Result<TaskResult, ClientError> {
        self.record("container");
        let (text, _) = Self::load(config.as_ref(), "container", TaskKind::Container)?;
        self.run_text(&text).await
    }
}

/// Percent-encodes everything outside the unreserved set and `,`.
pub fn encode_query(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' | b',' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}
