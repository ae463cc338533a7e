//! HTTP/JSON front end of the broker. Endpoint shapes are documented in
//! `docs/api.md`.

use std::collections::HashSet;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use catroute_core::error::{ModelError, RankError, ServiceError};
use catroute_core::model::ConjunctiveQuery;
use catroute_core::protocol::record_fields;
use catroute_core::service::{BrokerService, Selection};
use log::{error, info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

#[derive(Debug, Clone)]
pub struct ApiConfig {
    /// Mount the `/api/admin/*` endpoints.
    pub admin_enabled: bool,
    /// Directory of static UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            admin_enabled: true,
            static_dir: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    broker: Arc<BrokerService>,
    sampling: Arc<Mutex<HashSet<String>>>,
}

/// JSON error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            ServiceError::Query(ModelError::EmptyQuery) => (StatusCode::BAD_REQUEST, "empty_query"),
            ServiceError::Query(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::Rank(RankError::NoDatabases) => (StatusCode::SERVICE_UNAVAILABLE, "no_databases"),
            ServiceError::UnknownDatabase(_) => (StatusCode::BAD_REQUEST, "unknown_database"),
            ServiceError::NoSelection => (StatusCode::BAD_REQUEST, "no_selection"),
            ServiceError::EmptyLibrary => (StatusCode::CONFLICT, "empty_library"),
            ServiceError::Sampler(_) => (StatusCode::BAD_GATEWAY, "sampling_failed"),
            ServiceError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        if status.is_server_error() {
            error!("{message}");
        }
        ApiError::new(status, code, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Default, Deserialize)]
pub struct RankRequest {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub session: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct SubmitRequest {
    pub query: ConjunctiveQuery,
    pub databases: Vec<Selection>,
}

#[derive(Debug, Serialize)]
struct RecordDetail {
    db_id: String,
    locator: String,
    record: catroute_core::model::BibRecord,
    fields: Vec<(&'static str, String)>,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn databases(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "databases": s.broker.databases() }))
}

async fn rank_query(
    State(s): State<AppState>,
    body: Result<Json<RankRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let broker = Arc::clone(&s.broker);
    let resp = blocking(move || broker.rank_query(&req.title, &req.author, &req.subject, req.session.as_deref())).await?;
    Ok(Json(resp).into_response())
}

async fn submit_query(
    State(s): State<AppState>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let broker = Arc::clone(&s.broker);
    let results = blocking(move || broker.submit_query(&req.query, &req.databases)).await?;
    Ok(Json(json!({ "results": results })).into_response())
}

async fn record_detail(
    State(s): State<AppState>,
    Path((db_id, locator)): Path<(String, String)>,
) -> ApiResult<RecordDetail> {
    let record = s
        .broker
        .record(&db_id, &locator)
        .ok_or_else(|| ApiError::not_found("not_found", format!("no cached record {db_id}/{locator}")))?;
    Ok(Json(RecordDetail {
        fields: record_fields(&record),
        db_id,
        locator,
        record,
    }))
}

async fn daily_update(State(s): State<AppState>) -> Result<Response, ApiError> {
    let broker = Arc::clone(&s.broker);
    let summary = blocking(move || broker.daily_update()).await?;
    Ok(Json(summary).into_response())
}

async fn monthly_update(State(s): State<AppState>) -> Result<Response, ApiError> {
    let broker = Arc::clone(&s.broker);
    let summary = blocking(move || broker.monthly_update()).await?;
    Ok(Json(summary).into_response())
}

fn known_db(s: &AppState, db_id: &str) -> Result<(), ApiError> {
    if s.broker.db_ids().iter().any(|id| id == db_id) {
        Ok(())
    } else {
        Err(ApiError::not_found("unknown_database", format!("unknown database `{db_id}`")))
    }
}

/// Starts sampling in the background; progress is read from the report endpoint.
async fn start_sampling(State(s): State<AppState>, Path(db_id): Path<String>) -> Result<Response, ApiError> {
    known_db(&s, &db_id)?;
    let queries = s.broker.library().len();
    if queries == 0 {
        return Err(ServiceError::EmptyLibrary.into());
    }
    if !s.sampling.lock().unwrap_or_else(|e| e.into_inner()).insert(db_id.clone()) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "sampling_in_progress",
            format!("`{db_id}` is already being sampled"),
        ));
    }
    let broker = Arc::clone(&s.broker);
    let running = Arc::clone(&s.sampling);
    let id = db_id.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = broker.sample_database(&id) {
            warn!("sampling {id} failed: {e}");
        }
        running.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "db_id": db_id, "queries": queries }))).into_response())
}

async fn sampling_report(State(s): State<AppState>, Path(db_id): Path<String>) -> Result<Response, ApiError> {
    known_db(&s, &db_id)?;
    let report = s
        .broker
        .report(&db_id)?
        .ok_or_else(|| ApiError::not_found("no_report", format!("`{db_id}` has not been sampled")))?;
    let running = s.sampling.lock().unwrap_or_else(|e| e.into_inner()).contains(&db_id);
    Ok(Json(json!({
        "running": running,
        "final_count": report.final_count(),
        "report": report,
    }))
    .into_response())
}

async fn journal(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "runs": s.broker.journal() }))
}

async fn stats(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!(s.broker.stats()))
}

async fn fallback() -> ApiError {
    ApiError::not_found("not_found", "no such endpoint")
}

pub fn router(broker: Arc<BrokerService>, config: &ApiConfig) -> Router {
    let state = AppState {
        broker,
        sampling: Arc::new(Mutex::new(HashSet::new())),
    };
    let mut api = Router::new()
        .route("/api/health", get(health))
        .route("/api/databases", get(databases))
        .route("/api/rank", post(rank_query))
        .route("/api/submit", post(submit_query))
        .route("/api/records/{db_id}/{locator}", get(record_detail));
    if config.admin_enabled {
        api = api
            .route("/api/admin/daily-update", post(daily_update))
            .route("/api/admin/monthly-update", post(monthly_update))
            .route("/api/admin/sample/{db_id}", post(start_sampling))
            .route("/api/admin/reports/{db_id}", get(sampling_report))
            .route("/api/admin/journal", get(journal))
            .route("/api/admin/stats", get(stats));
    }
    let api = api.with_state(state).layer(CorsLayer::permissive());
    match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(fallback),
    }
}

/// Checks the maintenance schedule every `period` and runs what is due.
pub fn spawn_scheduler(broker: Arc<BrokerService>, period: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tick.tick().await;
            let b = Arc::clone(&broker);
            match tokio::task::spawn_blocking(move || b.run_due_now()).await {
                Ok(Ok(Some(summary))) => info!("scheduled {} update finished", summary.kind.as_str()),
                Ok(Ok(None)) => {}
                Ok(Err(e)) => warn!("scheduled update failed: {e}"),
                Err(e) => warn!("scheduler task failed: {e}"),
            }
        }
    })
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        info!("broker listening on http://{addr}");
    }
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
