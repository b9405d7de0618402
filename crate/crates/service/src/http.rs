//! HTTP routes over the session store.
//!
//! Bodies are JSON. Errors carry `{code, message, detail}` with 4xx for
//! client mistakes and 503 when the model gateway cannot be built.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};
use tower_http::services::ServeDir;

use storyweave_core::export::ExportFormat;
use storyweave_core::model::{FactId, KnowledgeDoc, MetaRelation, RelationId};

use crate::session::{DeckOp, NewRelation, RelationPatch, SessionConfig, SessionError};
use crate::store::{NewSession, SessionStore};

pub struct ApiError(pub SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &SessionError) -> StatusCode {
    match e {
        SessionError::UnknownSession(_) | SessionError::UnknownFact(_) | SessionError::UnknownRelation(_) => {
            StatusCode::NOT_FOUND
        }
        SessionError::DuplicateFact(_)
        | SessionError::DuplicateChart(_)
        | SessionError::CapacityExceeded { .. }
        | SessionError::EmptyDeck => StatusCode::CONFLICT,
        SessionError::Parse(_)
        | SessionError::Chart(_)
        | SessionError::InvalidRelation(_)
        | SessionError::UnknownTarget(_)
        | SessionError::InvalidRequest(_)
        | SessionError::Export(_) => StatusCode::BAD_REQUEST,
        SessionError::GatewayUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        SessionError::Organize(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "code": self.0.code(),
            "message": self.0.to_string(),
            "detail": self.0.detail(),
        });
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(SessionError::InvalidRequest(format!("request body: {e}"))))
}

/// Runs blocking session work (model calls included) off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(SessionError::InvalidRequest(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

#[derive(Debug, Deserialize)]
struct DatasetInput {
    #[serde(default = "default_dataset_name")]
    name: String,
    #[serde(default)]
    format: Option<String>,
    content: String,
}

fn default_dataset_name() -> String {
    "dataset".into()
}

#[derive(Debug, Deserialize)]
struct KnowledgeInput {
    #[serde(default)]
    doc_id: Option<String>,
    #[serde(default)]
    title: String,
    body: String,
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    dataset: DatasetInput,
    #[serde(default)]
    knowledge: Vec<KnowledgeInput>,
    #[serde(default)]
    intent: String,
    #[serde(default)]
    config: Option<SessionConfig>,
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse_body(&body)?;
    let store = Arc::clone(&st.store);
    let view = blocking(move || {
        let knowledge = req
            .knowledge
            .into_iter()
            .enumerate()
            .map(|(i, k)| KnowledgeDoc {
                doc_id: k.doc_id.unwrap_or_else(|| format!("k{}", i + 1)),
                title: k.title,
                body: k.body,
            })
            .collect();
        let (_, shared) = store.create(NewSession {
            data: req.dataset.content.as_bytes(),
            format_hint: req.dataset.format.as_deref(),
            dataset_name: &req.dataset.name,
            knowledge,
            intent: req.intent,
            config: req.config,
        })?;
        let view = shared.read().unwrap_or_else(|p| p.into_inner()).view();
        Ok(view)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = st.store.read(&id, |s| Ok(s.view()))?;
    Ok(Json(view).into_response())
}

async fn submit_chart(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let doc: JsonValue = parse_body(&body)?;
    let spec = match doc.get("spec") {
        Some(JsonValue::String(s)) => s.clone(),
        Some(v) => v.to_string(),
        None => doc.to_string(),
    };
    let store = Arc::clone(&st.store);
    let out = blocking(move || store.mutate(&id, |s| s.submit_chart(&spec))).await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

#[derive(Debug, Deserialize)]
struct Selection {
    fact_id: FactId,
    #[serde(default)]
    meta_relation_id: Option<RelationId>,
}

async fn select_fact(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let sel: Selection = parse_body(&body)?;
    let store = Arc::clone(&st.store);
    let out = blocking(move || store.mutate(&id, |s| s.select_fact(&sel.fact_id, sel.meta_relation_id.as_ref()))).await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

#[derive(Serialize)]
struct RelationResponse {
    relation: MetaRelation,
    revision: u64,
}

async fn edit_relation(
    State(st): State<AppState>,
    Path((id, rid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let p: RelationPatch = parse_body(&body)?;
    let store = Arc::clone(&st.store);
    let (relation, revision) =
        blocking(move || store.mutate(&id, |s| s.edit_meta_relation(&RelationId(rid), p))).await?;
    Ok(Json(RelationResponse { relation, revision }).into_response())
}

async fn add_relation(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let new: NewRelation = parse_body(&body)?;
    let store = Arc::clone(&st.store);
    let (relation, revision) = blocking(move || store.mutate(&id, |s| s.add_meta_relation(new))).await?;
    Ok((StatusCode::CREATED, Json(RelationResponse { relation, revision })).into_response())
}

async fn mutate_deck(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let op: DeckOp = parse_body(&body)?;
    let store = Arc::clone(&st.store);
    let out = blocking(move || store.mutate(&id, |s| s.mutate_deck(op))).await?;
    Ok(Json(out).into_response())
}

#[derive(Debug, Deserialize)]
struct IntentBody {
    intent: String,
}

async fn update_intent(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let b: IntentBody = parse_body(&body)?;
    let store = Arc::clone(&st.store);
    let (intent, revision) = blocking(move || {
        store.mutate(&id, |s| {
            let revision = s.update_intent(&b.intent);
            Ok((s.context.intent.clone(), revision))
        })
    })
    .await?;
    Ok(Json(json!({ "intent": intent, "revision": revision })).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    theme: Option<String>,
}

async fn export(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let format = ExportFormat::parse(q.format.as_deref().unwrap_or("markdown-slides")).map_err(SessionError::from)?;
    let theme = q.theme.unwrap_or_default();
    let (doc, revision) = st.store.read(&id, |s| Ok((s.export(format, &theme)?, s.revision)))?;
    let mut resp = doc.content.into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(format.media_type()));
    if let Ok(v) = HeaderValue::from_str(&revision.to_string()) {
        h.insert("x-revision", v);
    }
    if let Ok(v) = HeaderValue::from_str(&format!("attachment; filename=\"{id}.{}\"", format.extension())) {
        h.insert(header::CONTENT_DISPOSITION, v);
    }
    Ok(resp)
}

async fn transcript(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = st.store.read(&id, |s| Ok(s.transcript.to_jsonl()))?;
    let mut resp = text.into_response();
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    Ok(resp)
}

async fn health(State(st): State<AppState>) -> Json<JsonValue> {
    Json(json!({ "status": "ok", "sessions": st.store.len() }))
}

async fn not_found() -> ApiError {
    ApiError(SessionError::InvalidRequest("no such endpoint".into()))
}

pub fn router(store: Arc<SessionStore>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/charts", post(submit_chart))
        .route("/api/sessions/{id}/selections", post(select_fact))
        .route("/api/sessions/{id}/meta-relations", post(add_relation))
        .route("/api/sessions/{id}/meta-relations/{rid}", patch(edit_relation))
        .route("/api/sessions/{id}/deck", patch(mutate_deck))
        .route("/api/sessions/{id}/intent", put(update_intent))
        .route("/api/sessions/{id}/export", get(export))
        .route("/api/sessions/{id}/transcript", get(transcript))
        .route("/api/{*rest}", axum::routing::any(not_found))
        .with_state(AppState { store });
    match static_dir {
        Some(dir) if dir.is_dir() => api.fallback_service(ServeDir::new(dir)),
        _ => api,
    }
}
