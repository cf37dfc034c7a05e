//! HTTP API for the prompt workbench: prompt-set CRUD, working-set
//! evaluation and saliency statistics. Bodies are JSON; errors carry
//! `{code, message, detail}`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use posepilot_core::dataset::Manifest;
use posepilot_core::metrics::MetricsReport;
use posepilot_core::prompts::{validate_prompt_set, LintFinding, PromptSet, StopList};
use posepilot_core::saliency::SaliencyStats;
use posepilot_core::zeroshot::{ClassScores, ScoringParams};
use posepilot_core::{ClassLabel, Task};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{BackendDescriptor, Encoder};
use crate::classify::{classify_records, strip_labels, RecordFailure};
use crate::error::Error;
use crate::evaluation::{evaluate_scores, EvalOptions};
use crate::promptsets::PromptStore;
use crate::saliency::{overlay_path, record_saliency, ClassSelection};

pub const DEFAULT_WORKING_SET_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingSet {
    pub ws_id: String,
    pub image_ids: Vec<String>,
    pub backend: String,
    pub task: Task,
    pub temperature: f64,
    pub abstain_margin: f64,
}

struct Inner {
    manifest: Manifest,
    base_dir: PathBuf,
    encoder: Arc<Encoder>,
    store: PromptStore,
    stoplist: StopList,
    overlay_dir: PathBuf,
    cap: usize,
    working_sets: RwLock<BTreeMap<String, WorkingSet>>,
    next_ws: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// `base_dir` resolves manifest file paths; overlays go to `overlay_dir`.
    pub fn new(
        manifest: Manifest,
        base_dir: PathBuf,
        encoder: Arc<Encoder>,
        store: PromptStore,
        overlay_dir: PathBuf,
    ) -> crate::Result<Self> {
        std::fs::create_dir_all(&overlay_dir).map_err(|e| Error::io(&overlay_dir, e))?;
        Ok(Self(Arc::new(Inner {
            manifest,
            base_dir,
            encoder,
            store,
            stoplist: StopList::builtin(),
            overlay_dir,
            cap: DEFAULT_WORKING_SET_CAP,
            working_sets: RwLock::default(),
            next_ws: AtomicU64::new(1),
        })))
    }

    pub fn with_cap(self, cap: usize) -> Self {
        let mut inner = Arc::try_unwrap(self.0).unwrap_or_else(|_| panic!("set the cap before sharing the state"));
        inner.cap = cap;
        Self(Arc::new(inner))
    }

    pub fn encoder(&self) -> &Encoder {
        &self.0.encoder
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), detail: Value::Null }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`")).with_detail(json!({ "id": id }))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Core(_) | Error::Config(_) | Error::Unsupported(_) => Self::invalid(message),
            Error::RevisionConflict { id, base, current } => Self::new(StatusCode::CONFLICT, "revision_conflict", message)
                .with_detail(json!({ "id": id, "base_revision": base, "current_revision": current })),
            Error::UnknownPromptSet(id) => Self::not_found("prompt set", &id),
            Error::Backend { backend, .. } => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable", message).with_detail(json!({ "backend": backend }))
            }
            Error::Image { .. } => Self::invalid(message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message, "detail": self.detail }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    backend: BackendDescriptor,
    n_records: usize,
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok", backend: s.0.encoder.descriptor().clone(), n_records: s.0.manifest.len() })
}

async fn manifest(State(s): State<AppState>) -> Json<Value> {
    let m = &s.0.manifest;
    Json(json!({
        "n_records": m.len(),
        "class_counts": m.class_counts(),
        "resize_target": m.resize_target(),
        "records": m.records(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptSetResponse {
    pub prompt_set: PromptSet,
    pub findings: Vec<LintFinding>,
}

fn with_findings(s: &AppState, ps: PromptSet) -> ApiResult<PromptSetResponse> {
    let findings = validate_prompt_set(&ps, &s.0.stoplist).map_err(Error::from)?;
    Ok(Json(PromptSetResponse { prompt_set: ps, findings }))
}

async fn list_promptsets(State(s): State<AppState>) -> ApiResult<Vec<PromptSet>> {
    Ok(Json(s.0.store.list()?))
}

async fn get_promptset(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<PromptSetResponse> {
    let ps = s.0.store.get(&id)?.ok_or_else(|| ApiError::not_found("prompt set", &id))?;
    with_findings(&s, ps)
}

/// The body's `revision` is the revision the edit was based on.
async fn put_promptset(State(s): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<PromptSetResponse> {
    let ps: PromptSet = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("body is not a prompt set: {e}")))?;
    if ps.set_id != id {
        return Err(ApiError::invalid(format!("body set_id `{}` does not match `{id}`", ps.set_id)));
    }
    let base = ps.revision;
    let stored = s.0.store.put(ps, base)?;
    with_findings(&s, stored)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewWorkingSet {
    pub image_ids: Vec<String>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub abstain_margin: f64,
}

fn default_task() -> Task {
    Task::Multi
}

fn default_temperature() -> f64 {
    1.0
}

async fn create_working_set(State(s): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<WorkingSet>), ApiError> {
    let req: NewWorkingSet = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("body is not a working set: {e}")))?;
    if req.image_ids.is_empty() {
        return Err(ApiError::invalid("working set is empty"));
    }
    if req.image_ids.len() > s.0.cap {
        return Err(ApiError::invalid(format!("working set has {} images; the cap is {}", req.image_ids.len(), s.0.cap))
            .with_detail(json!({ "cap": s.0.cap })));
    }
    let unknown: Vec<&String> = req.image_ids.iter().filter(|id| s.0.manifest.get(id).is_none()).collect();
    if !unknown.is_empty() {
        return Err(ApiError::invalid("working set names images outside the manifest").with_detail(json!({ "unknown": unknown })));
    }
    let backend = s.0.encoder.name().to_string();
    if let Some(b) = &req.backend {
        if *b != backend {
            return Err(ApiError::invalid(format!("this service runs backend `{backend}`, not `{b}`")));
        }
    }
    ScoringParams::new(req.temperature, req.abstain_margin).map_err(Error::from)?;
    let n = s.0.next_ws.fetch_add(1, Ordering::Relaxed);
    let ws = WorkingSet {
        ws_id: format!("ws-{n}"),
        image_ids: req.image_ids,
        backend,
        task: req.task,
        temperature: req.temperature,
        abstain_margin: req.abstain_margin,
    };
    s.0.working_sets.write().expect("working sets lock").insert(ws.ws_id.clone(), ws.clone());
    Ok((StatusCode::CREATED, Json(ws)))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    pub ws_id: String,
    pub prompt_set_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub ws_id: String,
    pub prompt_set_id: String,
    pub revision: u64,
    pub backend: String,
    pub task: Task,
    pub temperature: f64,
    pub abstain_margin: f64,
    pub scores: Vec<ClassScores>,
    pub metrics: MetricsReport,
    /// Working-set images whose truth lies outside the task's classes.
    pub excluded: Vec<String>,
    pub failures: Vec<RecordFailure>,
}

async fn evaluate(State(s): State<AppState>, body: Bytes) -> ApiResult<EvaluateResponse> {
    let req: EvaluateRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("body is not an evaluate request: {e}")))?;
    let ws = s.0.working_sets.read().expect("working sets lock").get(&req.ws_id).cloned();
    let ws = ws.ok_or_else(|| ApiError::not_found("working set", &req.ws_id))?;
    let ps = s.0.store.get(&req.prompt_set_id)?.ok_or_else(|| ApiError::not_found("prompt set", &req.prompt_set_id))?;
    blocking(move || {
        let inner = &s.0;
        let (records, excluded): (Vec<_>, Vec<_>) = ws
            .image_ids
            .iter()
            .map(|id| inner.manifest.get(id).expect("working sets only hold manifest ids"))
            .partition(|r| ws.task.includes(r.label));
        if records.is_empty() {
            return Err(ApiError::invalid(format!("no working-set image belongs to the {} task", ws.task)));
        }
        let params = ScoringParams::new(ws.temperature, ws.abstain_margin).map_err(Error::from)?;
        let out = classify_records(&inner.encoder, &records, &inner.base_dir, &ps, &params, ws.task)?;
        if out.scores.is_empty() {
            return Err(ApiError::invalid("no working-set image could be scored").with_detail(json!({ "failures": out.failures })));
        }
        let scores = strip_labels(&out.scores);
        let metrics = evaluate_scores(&scores, &inner.manifest, &EvalOptions::new(ws.task))?;
        Ok(Json(EvaluateResponse {
            ws_id: ws.ws_id,
            prompt_set_id: ps.set_id,
            revision: ps.revision,
            backend: inner.encoder.name().to_string(),
            task: ws.task,
            temperature: ws.temperature,
            abstain_margin: ws.abstain_margin,
            scores,
            metrics,
            excluded: excluded.into_iter().map(|r| r.image_id.clone()).collect(),
            failures: out.failures,
        }))
    })
    .await
}

#[derive(Debug, Clone, Deserialize)]
pub struct SaliencyQuery {
    pub image_id: String,
    pub promptset: String,
    #[serde(default)]
    pub class: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencyItem {
    pub class: ClassLabel,
    pub prompt_index: usize,
    pub prompt: String,
    pub stats: SaliencyStats,
    /// URL of the 8-bit overlay raster.
    pub overlay: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencyResponse {
    pub image_id: String,
    pub prompt_set_id: String,
    pub revision: u64,
    pub items: Vec<SaliencyItem>,
}

async fn saliency(State(s): State<AppState>, Query(q): Query<SaliencyQuery>) -> ApiResult<SaliencyResponse> {
    let record = s.0.manifest.get(&q.image_id).cloned().ok_or_else(|| ApiError::not_found("image", &q.image_id))?;
    let ps = s.0.store.get(&q.promptset)?.ok_or_else(|| ApiError::not_found("prompt set", &q.promptset))?;
    let selection: ClassSelection = match q.class.as_deref() {
        None | Some("") => ClassSelection::Truth,
        Some(c) => c.parse()?,
    };
    blocking(move || {
        let inner = &s.0;
        let entries = record_saliency(&inner.encoder, &record, &inner.base_dir, &ps, selection, Some(&inner.overlay_dir))?;
        Ok(Json(SaliencyResponse {
            image_id: record.image_id,
            prompt_set_id: ps.set_id,
            revision: ps.revision,
            items: entries
                .into_iter()
                .map(|e| SaliencyItem {
                    class: e.class,
                    prompt_index: e.prompt_index,
                    prompt: e.prompt,
                    stats: e.stats,
                    overlay: e.overlay.map(|name| format!("/overlays/{name}")),
                })
                .collect(),
        }))
    })
    .await
}

async fn overlay(State(s): State<AppState>, UrlPath(name): UrlPath<String>) -> Result<Response, ApiError> {
    let path = overlay_path(&s.0.overlay_dir, &name).ok_or_else(|| ApiError::not_found("overlay", &name))?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found("overlay", &name))?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/manifest", get(manifest))
        .route("/api/promptsets", get(list_promptsets))
        .route("/api/promptsets/{id}", get(get_promptset).put(put_promptset))
        .route("/api/workingsets", axum::routing::post(create_working_set))
        .route("/api/evaluate", axum::routing::post(evaluate))
        .route("/api/saliency", get(saliency))
        .route("/overlays/{name}", get(overlay))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::Config(e.to_string()))?;
    eprintln!("posepilot: serving on http://{local}");
    axum::serve(listener, router(state)).await.map_err(|e| Error::Config(format!("server stopped: {e}")))
}
