//! Routes and JSON plumbing.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::app::{NewProject, NewSubmission, NewVideo, Service, SupervisorScore};
use crate::error::ApiError;

type Shared = State<Arc<Service>>;

#[derive(Debug, Default, Deserialize)]
pub struct ProjectQuery {
    pub project: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub worker: String,
    pub project: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct EvalQuery {
    pub video: String,
    pub project: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ProjectBody {
    #[serde(default)]
    project: Option<String>,
}

/// Parses a JSON body, naming the offending field on failure.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::Invalid { path: (path != ".").then_some(path), message: e.inner().to_string() }
    })
}

fn parse_or_default<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc)).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create_project(State(svc): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: NewProject = parse(&body)?;
    let record = blocking(svc, move |s| s.create_project(req)).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn register_video(State(svc): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: NewVideo = parse(&body)?;
    let meta = blocking(svc, move |s| s.register_video(req)).await?;
    Ok((StatusCode::CREATED, Json(meta)).into_response())
}

async fn upload_ground_truth(
    State(svc): Shared,
    Path(video): Path<String>,
    Query(q): Query<ProjectQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::invalid("body must be UTF-8 JSON"))?;
    let tracks = blocking(svc, move |s| s.upload_ground_truth(q.project.as_deref(), &video, &text)).await?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "tracks": tracks }))).into_response())
}

async fn generate_tasks(State(svc): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: ProjectBody = parse_or_default(&body)?;
    let tasks = blocking(svc, move |s| s.generate_tasks(req.project.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(tasks)).into_response())
}

async fn list_tasks(State(svc): Shared, Query(q): Query<ProjectQuery>) -> Result<Response, ApiError> {
    let tasks = blocking(svc, move |s| s.tasks(q.project.as_deref())).await?;
    Ok(Json(tasks).into_response())
}

async fn next_task(State(svc): Shared, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let offer = blocking(svc, move |s| s.next_task(&q.worker, q.project.as_deref())).await?;
    Ok(match offer {
        Some(offer) => Json(offer).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(
    State(svc): Shared,
    Path(task): Path<String>,
    Query(q): Query<ProjectQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: NewSubmission = parse(&body)?;
    let receipt = blocking(svc, move |s| s.submit(&task, q.project.as_deref(), req)).await?;
    Ok((StatusCode::CREATED, Json(receipt)).into_response())
}

async fn record_score(State(svc): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: SupervisorScore = parse(&body)?;
    blocking(svc, move |s| s.record_score(req)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn advance(State(svc): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: ProjectBody = parse_or_default(&body)?;
    let outcome = blocking(svc, move |s| s.advance_round(req.project.as_deref())).await?;
    Ok(Json(outcome).into_response())
}

async fn annotations(
    State(svc): Shared,
    Path(video): Path<String>,
    Query(q): Query<ProjectQuery>,
) -> Result<Response, ApiError> {
    let doc = blocking(svc, move |s| s.annotations(q.project.as_deref(), &video)).await?;
    Ok(Json(doc).into_response())
}

async fn evaluate(State(svc): Shared, Query(q): Query<EvalQuery>) -> Result<Response, ApiError> {
    let report = blocking(svc, move |s| s.evaluate(q.project.as_deref(), &q.video)).await?;
    Ok(Json(report).into_response())
}

async fn audit(State(svc): Shared, Query(q): Query<ProjectQuery>) -> Result<Response, ApiError> {
    let violations = blocking(svc, move |s| s.audit(q.project.as_deref())).await?;
    Ok(Json(violations).into_response())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/projects", post(create_project))
        .route("/api/videos", post(register_video))
        .route("/api/videos/{id}/ground_truth", put(upload_ground_truth))
        .route("/api/videos/{id}/annotations", get(annotations))
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{id}/submissions", post(submit))
        .route("/api/admin/tasks/generate", post(generate_tasks))
        .route("/api/admin/rounds/advance", post(advance))
        .route("/api/admin/scores", post(record_score))
        .route("/api/admin/audit", get(audit))
        .route("/api/eval", get(evaluate))
        .with_state(service)
}
