//! HTTP/JSON front end of the annotation service.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/tasks/next?annotator_id=` | next task, 204 when none |
//! | POST | `/api/annotations` | submit, 201 with the id |
//! | GET | `/api/generations/{id}` | one generation |
//! | GET | `/api/generations/{id}/annotations` | its submitted annotations |
//! | POST | `/api/qualification` | grade a quiz |
//! | GET | `/api/reports/{kind}` | reports over the store |
//!
//! Writes go through one lock; reads share it.

use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use errspan_core::Annotation;

use crate::qualification::QualificationResponse;
use crate::reports::{render, Format, ReportError, ReportKind, ReportParams};
use crate::service::{AnnotationService, ServiceError};
use crate::store::Store;

pub type SharedService = Arc<RwLock<AnnotationService<Box<dyn Store>>>>;

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/annotations", post(submit))
        .route("/api/generations/{id}", get(generation))
        .route("/api/generations/{id}/annotations", get(annotations))
        .route("/api/qualification", post(qualification))
        .route("/api/reports/{kind}", get(report))
        .with_state(service)
}

struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn error(status: StatusCode, message: impl ToString) -> ApiError {
    ApiError(status, json!({ "error": message.to_string() }))
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::NotQualified(_) => error(StatusCode::FORBIDDEN, e),
            ServiceError::NoAssignment { .. } | ServiceError::Duplicate(_) => {
                error(StatusCode::CONFLICT, e)
            }
            ServiceError::Invalid(ref violations) => ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": e.to_string(), "violations": violations }),
            ),
            ServiceError::Grade(_) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
            ServiceError::Store(_) => {
                log::error!("store failure: {e}");
                error(StatusCode::INTERNAL_SERVER_ERROR, e)
            }
        }
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::BadRequest(_) => error(StatusCode::BAD_REQUEST, e),
            ReportError::NotFound(_) => error(StatusCode::NOT_FOUND, e),
            ReportError::Core(_) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
        }
    }
}

fn poisoned() -> ApiError {
    error(StatusCode::INTERNAL_SERVER_ERROR, "service state is poisoned")
}

#[derive(Deserialize)]
struct NextTaskQuery {
    annotator_id: String,
}

async fn next_task(
    State(service): State<SharedService>,
    Query(q): Query<NextTaskQuery>,
) -> Result<Response, ApiError> {
    let mut service = service.write().map_err(|_| poisoned())?;
    Ok(match service.next_task(&q.annotator_id)? {
        Some(g) => Json(g).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(
    State(service): State<SharedService>,
    Json(annotation): Json<Annotation>,
) -> Result<Response, ApiError> {
    let mut service = service.write().map_err(|_| poisoned())?;
    let id = service.submit(annotation)?;
    Ok((StatusCode::CREATED, Json(json!({ "annotation_id": id }))).into_response())
}

async fn generation(
    State(service): State<SharedService>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let service = service.read().map_err(|_| poisoned())?;
    match service.generation(&id) {
        Some(g) => Ok(Json(g).into_response()),
        None => Err(error(StatusCode::NOT_FOUND, format!("generation {id} not found"))),
    }
}

async fn annotations(
    State(service): State<SharedService>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let service = service.read().map_err(|_| poisoned())?;
    match service.annotations_of(&id) {
        Some(list) => Ok(Json(list).into_response()),
        None => Err(error(StatusCode::NOT_FOUND, format!("generation {id} not found"))),
    }
}

async fn qualification(
    State(service): State<SharedService>,
    Json(response): Json<QualificationResponse>,
) -> Result<Response, ApiError> {
    let mut service = service.write().map_err(|_| poisoned())?;
    let grade = service.qualify(&response)?;
    Ok(Json(grade).into_response())
}

async fn report(
    State(service): State<SharedService>,
    Path(kind): Path<String>,
    Query(params): Query<ReportParams>,
) -> Result<Response, ApiError> {
    let kind = ReportKind::parse(&kind)
        .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown report {kind}")))?;
    let dataset = service.read().map_err(|_| poisoned())?.dataset();
    let body = render(kind, &dataset, &params)?;
    let content_type = match params.format {
        Format::Json => "application/json",
        Format::Csv => "text/csv; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}
