//! The `/v1` HTTP API.
//!
//! Every JSON response is an envelope: `{"ok": true, "data": ...}` or
//! `{"ok": false, "error": {"code": ..., "message": ...}}`. Content downloads
//! are raw bytes with an `X-Content-Digest` header instead.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hpcfair_core::registry::{ArtifactDraft, ArtifactType, Registry, RegistryError, SearchQuery};
use hpcfair_core::tasks::{
    parse_config, validate_config, ArtifactResolver, Dispatcher, TaskContext, TaskError, TaskErrorInfo, TaskResult, TaskStatus,
};
use hpcfair_core::ValidationReport;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

pub const DIGEST_HEADER: &str = "x-content-digest";
const BODY_LIMIT: usize = 256 * 1024 * 1024;

/// Where the service keeps its state.
#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Registry store: blobs, `meta.log`, `tokens`.
    pub store: PathBuf,
    /// Relative paths in task configs resolve here.
    pub workdir: PathBuf,
    /// Tasks that may run at once.
    pub workers: usize,
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>, workdir: impl Into<PathBuf>) -> Self {
        ServiceConfig { store: store.into(), workdir: workdir.into(), workers: 4 }
    }
}

pub struct AppState {
    pub registry: Arc<Registry>,
    pub dispatcher: Arc<Dispatcher>,
    tasks: RwLock<HashMap<String, TaskResult>>,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn open(cfg: &ServiceConfig) -> Result<Arc<Self>, RegistryError> {
        Ok(Self::with_registry(Arc::new(Registry::open(&cfg.store)?), cfg))
    }

    pub fn with_registry(registry: Arc<Registry>, cfg: &ServiceConfig) -> Arc<Self> {
        let ctx = TaskContext::new(&cfg.workdir).confined().with_state_dir(cfg.store.join("sandbox"));
        Arc::new(AppState {
            registry,
            dispatcher: Arc::new(Dispatcher::new(ctx)),
            tasks: RwLock::new(HashMap::new()),
            permits: Arc::new(Semaphore::new(cfg.workers.max(1))),
        })
    }

    pub fn task(&self, id: &str) -> Option<TaskResult> {
        self.tasks.read().expect("task table lock").get(id).cloned()
    }
}

/// An error response.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub data: Option<Value>,
    pub report: Option<ValidationReport>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), data: None, report: None }
    }

    fn invalid_config(report: ValidationReport) -> Self {
        let mut e = ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", report.violations.join("; "));
        e.report = Some(report);
        e
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match &e {
            RegistryError::Duplicate { .. } => StatusCode::CONFLICT,
            RegistryError::MissingToken | RegistryError::UnknownToken | RegistryError::TokenExpired(_) => StatusCode::UNAUTHORIZED,
            RegistryError::Forbidden { .. } => StatusCode::FORBIDDEN,
            RegistryError::InvalidArtifact(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RegistryError::UnknownPid(_) => StatusCode::NOT_FOUND,
            RegistryError::InvalidQuery(_) => StatusCode::BAD_REQUEST,
            RegistryError::Integrity { .. } | RegistryError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut out = ApiError::new(status, e.code(), e.to_string());
        if let RegistryError::Duplicate { pid } = &e {
            out.data = Some(json!({ "pid": pid }));
        }
        out
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(r) = self.report {
            error["report"] = serde_json::to_value(r).expect("report serializes");
        }
        let mut body = json!({ "ok": false, "error": error });
        if let Some(d) = self.data {
            body["data"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

fn ok(status: StatusCode, data: impl Serialize) -> Response {
    (status, Json(json!({ "ok": true, "data": data }))).into_response()
}

/// The token from `Authorization: Bearer <token>`, if any.
pub fn bearer(headers: &HeaderMap) -> Option<String> {
    let v = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = v.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim().to_string()).filter(|t| !t.is_empty())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))
}

async fn push_artifact(State(st): State<Arc<AppState>>, headers: HeaderMap, mut form: Multipart) -> Result<Response, ApiError> {
    let token = bearer(&headers);
    st.registry.authenticate(token.as_deref().ok_or(RegistryError::MissingToken)?)?;
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", m);
    let (mut draft, mut content): (Option<ArtifactDraft>, Option<Bytes>) = (None, None);
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.to_string()))? {
        match field.name() {
            Some("metadata") => {
                let bytes = field.bytes().await.map_err(|e| bad(e.to_string()))?;
                draft = Some(serde_json::from_slice(&bytes).map_err(|e| bad(format!("metadata: {e}")))?);
            }
            Some("content") => content = Some(field.bytes().await.map_err(|e| bad(e.to_string()))?),
            other => return Err(bad(format!("unexpected part {other:?}"))),
        }
    }
    let draft = draft.ok_or_else(|| bad("missing metadata part".into()))?;
    let content = content.ok_or_else(|| bad("missing content part".into()))?;
    let reg = st.registry.clone();
    let registration = blocking(move || reg.register_artifact(&content, draft, token.as_deref())).await??;
    Ok(ok(StatusCode::CREATED, registration))
}

async fn get_metadata(State(st): State<Arc<AppState>>, Path(pid): Path<String>) -> Result<Response, ApiError> {
    Ok(ok(StatusCode::OK, st.registry.fetch_metadata(&pid)?))
}

async fn get_content(State(st): State<Arc<AppState>>, Path(pid): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let token = bearer(&headers);
    let reg = st.registry.clone();
    let pid2 = pid.clone();
    let bytes = blocking(move || reg.fetch_content(&pid2, token.as_deref())).await??;
    let digest = st.registry.fetch_metadata(&pid)?.content_hash;
    let mut resp = (StatusCode::OK, bytes).into_response();
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    resp.headers_mut().insert(DIGEST_HEADER, HeaderValue::from_str(&digest).expect("hex is a valid header"));
    Ok(resp)
}

/// Builds a query from `tags`, `type`, `backend` and `title` parameters.
/// Empty values count as absent.
pub fn search_query(params: &HashMap<String, String>) -> Result<SearchQuery, RegistryError> {
    let present = |k: &str| params.get(k).map(|v| v.trim()).filter(|v| !v.is_empty());
    let artifact_type = present("type").map(|t| t.parse::<ArtifactType>().map_err(RegistryError::InvalidQuery)).transpose()?;
    Ok(SearchQuery {
        tags: hpcfair_core::registry::normalize_tags(present("tags").unwrap_or("").split(',')),
        artifact_type,
        backend_tag: present("backend").map(str::to_string),
        title_substring: present("title").map(str::to_string),
    })
}

async fn search(State(st): State<Arc<AppState>>, Query(params): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let q = search_query(&params)?;
    Ok(ok(StatusCode::OK, st.registry.search(&q)?))
}

pub fn token_resolver(registry: Arc<Registry>, token: String) -> ArtifactResolver {
    Arc::new(move |pid: &str| {
        registry.fetch_content(pid, Some(&token)).map_err(|e| TaskError::Artifact {
            reference: format!("pid:{pid}"),
            code: e.code().to_string(),
            message: e.to_string(),
        })
    })
}

async fn submit_task(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let token = bearer(&headers).ok_or(RegistryError::MissingToken)?;
    st.registry.authenticate(&token)?;
    let cfg = parse_config(&body).map_err(|e| ApiError::invalid_config(ValidationReport::from_violations(vec![e.to_string()])))?;
    let report = validate_config(&cfg);
    if !report.ok {
        return Err(ApiError::invalid_config(report));
    }
    let id = st.dispatcher.next_task_id(&cfg);
    st.tasks.write().expect("task table lock").insert(id.clone(), TaskResult::running(&id));

    let state = st.clone();
    let task_id = id.clone();
    tokio::spawn(async move {
        let _permit = state.permits.clone().acquire_owned().await.expect("semaphore is never closed");
        let dispatcher = state.dispatcher.clone();
        let resolver = token_resolver(state.registry.clone(), token);
        let run_id = task_id.clone();
        let result = tokio::task::spawn_blocking(move || dispatcher.run_with_resolver(run_id, &cfg, resolver))
            .await
            .unwrap_or_else(|e| TaskResult {
                task_id: task_id.clone(),
                status: TaskStatus::Failed,
                outputs: Vec::new(),
                log: Vec::new(),
                error: Some(TaskErrorInfo { code: "internal_error".into(), message: e.to_string(), stage: None }),
            });
        state.tasks.write().expect("task table lock").insert(task_id, result);
    });
    Ok(ok(StatusCode::ACCEPTED, json!({ "task_id": id })))
}

async fn get_task(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    st.task(&id)
        .map(|r| ok(StatusCode::OK, r))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_task", format!("unknown task {id}")))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/artifacts", post(push_artifact))
        .route("/v1/artifacts/{pid}", get(get_metadata))
        .route("/v1/artifacts/{pid}/content", get(get_content))
        .route("/v1/search", get(search))
        .route("/v1/tasks", post(submit_task))
        .route("/v1/tasks/{task_id}", get(get_task))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves `router` on `listener` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
