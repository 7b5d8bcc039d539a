use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ctlab_core::corpus::sample_to_json;
use ctlab_core::LabelVector;
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::error::AnnotateError;
use crate::state::Task;
use crate::store::Store;

pub type Shared = Arc<Mutex<Store>>;

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let status = match &self {
            AnnotateError::Validation(_) => StatusCode::BAD_REQUEST,
            AnnotateError::NotFound(_) => StatusCode::NOT_FOUND,
            AnnotateError::State(_) => StatusCode::CONFLICT,
            AnnotateError::Unauthorized(_) => StatusCode::FORBIDDEN,
            AnnotateError::SessionCap { .. } => StatusCode::TOO_MANY_REQUESTS,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self, "annotation store failure");
        }
        (status, Json(json!({"error": self.code(), "message": self.to_string()}))).into_response()
    }
}

type ApiResult = Result<Response, AnnotateError>;

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/api/sessions", post(start_session))
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{id}/vote", post(vote))
        .route("/api/conflicts", get(conflicts))
        .route("/api/conflicts/{id}/resolve", post(resolve))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .with_state(store)
}

fn param<'a>(q: &'a HashMap<String, String>, key: &str) -> Result<&'a str, AnnotateError> {
    q.get(key)
        .map(String::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| AnnotateError::Validation(format!("missing query parameter `{key}`")))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, AnnotateError> {
    serde_json::from_slice(body).map_err(|e| AnnotateError::Validation(format!("invalid request body: {e}")))
}

async fn start_session(State(store): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let annotator = param(&q, "annotator")?;
    let session = store.lock().start_session(annotator)?;
    Ok(Json(json!({ "session": session })).into_response())
}

async fn next_task(State(store): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let annotator = param(&q, "annotator")?;
    let (next, session) = store.lock().next_task(annotator)?;
    let body = match next {
        Some(t) => json!({"status": "task", "task_id": t.task_id, "text": t.text, "session": session}),
        None => json!({"status": "empty", "session": session}),
    };
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VoteBody {
    annotator: String,
    label: LabelVector,
    #[serde(default)]
    needs_context: bool,
}

async fn vote(State(store): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let body: VoteBody = parse_body(&body)?;
    let session = store.lock().vote(&id, &body.annotator, body.label, body.needs_context)?;
    Ok(Json(json!({"task_id": id, "accepted": true, "session": session})).into_response())
}

fn conflict_view(t: &Task) -> serde_json::Value {
    let votes: Vec<_> = t
        .votes
        .iter()
        .map(|(who, v)| json!({"annotator": who, "label": v.label, "needs_context": v.needs_context}))
        .collect();
    let reason = if t.flagged_needs_context() { "needs_context" } else { "disagreement" };
    json!({
        "task_id": t.task_id,
        "text": t.candidate.text,
        "state": t.state,
        "reason": reason,
        "votes": votes,
    })
}

async fn conflicts(State(store): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let adjudicator = param(&q, "adjudicator")?;
    let store = store.lock();
    let items: Vec<_> = store.conflicts(adjudicator)?.into_iter().map(conflict_view).collect();
    Ok(Json(json!({ "conflicts": items })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveBody {
    adjudicator: String,
    label: Option<LabelVector>,
    #[serde(default)]
    reject: bool,
}

async fn resolve(State(store): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let body: ResolveBody = parse_body(&body)?;
    let label = match (body.label, body.reject) {
        (Some(l), false) => Some(l),
        (None, true) => None,
        _ => {
            return Err(AnnotateError::Validation(
                "give exactly one of `label` or `reject: true`".into(),
            ))
        }
    };
    store.lock().resolve(&id, &body.adjudicator, label)?;
    Ok(Json(json!({"task_id": id, "resolved": true})).into_response())
}

/// Annotators only see their own queue; the full breakdown is for adjudicators.
async fn progress(State(store): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let store = store.lock();
    if let Some(adj) = q.get("adjudicator") {
        store.conflicts(adj)?;
        return Ok(Json(json!({ "progress": store.progress() })).into_response());
    }
    let annotator = param(&q, "annotator")?;
    Ok(Json(json!({ "progress": store.annotator_progress(annotator)? })).into_response())
}

async fn export(State(store): State<Shared>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let adjudicator = param(&q, "adjudicator")?;
    let store = store.lock();
    store.conflicts(adjudicator)?;
    let mut out = String::new();
    for s in store.export() {
        out.push_str(&serde_json::to_string(&sample_to_json(&s))?);
        out.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}
