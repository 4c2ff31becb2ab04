//! HTTP service over a trained stance model and a pattern-graph bundle.
//!
//! State is loaded once and shared read-only across requests. Every error
//! response is a JSON object `{"error": "..."}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::pipeline::{GraphBundle, RepresentativeRecord, StageError};
use crate::propagation::{self, GraphOptions};
use crate::stance_lm::{LmError, SwitchedLM};

pub const MAX_BODY_BYTES: usize = 64 * 1024;
pub const MAX_GENERATION_LENGTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_generation_length: usize,
    pub max_body_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_generation_length: MAX_GENERATION_LENGTH,
            max_body_bytes: MAX_BODY_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub model_path: PathBuf,
    /// A `bundle.json` written by the graph stage.
    pub graph_path: PathBuf,
    /// Threshold used when a graph request gives none.
    pub default_threshold: f64,
    pub limits: Limits,
    /// Optional directory of static files served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".to_string(),
            port: 8080,
            model_path: PathBuf::from("model.json"),
            graph_path: PathBuf::from("out/bundle.json"),
            default_threshold: propagation::DEFAULT_THRESHOLD,
            limits: Limits::default(),
            static_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("model {path}: {source}")]
    Model { path: PathBuf, source: LmError },
    #[error("graph bundle: {0}")]
    Bundle(#[from] StageError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceConfig {
    pub fn from_json_file(path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let path = path.into();
        let raw = std::fs::read_to_string(&path).map_err(|e| ServiceError::Config {
            path: path.clone(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&raw).map_err(|e| ServiceError::Config {
            path,
            message: e.to_string(),
        })
    }
}

pub struct ServiceState {
    pub model: SwitchedLM,
    pub bundle: GraphBundle,
    pub default_threshold: f64,
    pub limits: Limits,
}

pub fn load_state(config: &ServiceConfig) -> Result<ServiceState, ServiceError> {
    let model = SwitchedLM::load(&config.model_path).map_err(|source| ServiceError::Model {
        path: config.model_path.clone(),
        source,
    })?;
    let bundle = GraphBundle::load(&config.graph_path)?;
    Ok(ServiceState {
        model,
        bundle,
        default_threshold: config.default_threshold,
        limits: config.limits.clone(),
    })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<BytesRejection> for ApiError {
    fn from(r: BytesRejection) -> Self {
        ApiError::new(r.status(), r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

type Shared = Arc<ServiceState>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let body = body?;
    serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

fn default_length() -> usize {
    40
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_length")]
    pub length: usize,
    pub seed: Option<u64>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub text: String,
    pub seed: u64,
}

async fn generate(State(state): State<Shared>, body: Result<Bytes, BytesRejection>) -> Result<Json<GenerateResponse>, ApiError> {
    let req: GenerateRequest = parse_body(body)?;
    if !req.epsilon.is_finite() {
        return Err(ApiError::bad_request("epsilon must be finite"));
    }
    let max = state.limits.max_generation_length;
    if req.length == 0 || req.length > max {
        return Err(ApiError::bad_request(format!("length must be between 1 and {max}")));
    }
    if !(req.temperature.is_finite() && req.temperature >= 0.0) {
        return Err(ApiError::bad_request("temperature must be finite and nonnegative"));
    }
    let seed = req.seed.unwrap_or_else(rand::random);
    let text = tokio::task::spawn_blocking(move || {
        state.model.generate(&req.prompt, req.epsilon, req.length, seed, req.temperature)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(GenerateResponse { text, seed }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StanceRequest {
    text: String,
}

async fn stance(State(state): State<Shared>, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let req: StanceRequest = parse_body(body)?;
    match state.model.stance_score(&req.text) {
        Ok(score) => Ok(Json(score).into_response()),
        Err(e @ (LmError::EmptyText | LmError::OutOfVocabulary)) => Err(ApiError::bad_request(e.to_string())),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

#[derive(Debug, Deserialize)]
struct GraphQuery {
    threshold: Option<f64>,
    self_loops: Option<bool>,
}

async fn graph(State(state): State<Shared>, query: Result<Query<GraphQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let threshold = q.threshold.unwrap_or(state.default_threshold);
    let options = GraphOptions {
        include_self_loops: q.self_loops.unwrap_or(false),
    };
    let graph = state
        .bundle
        .graph(threshold, options)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(graph).into_response())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ClaimView {
    pub id: usize,
    pub summary: String,
    pub size: usize,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_stance: Option<f64>,
    pub representatives: Vec<RepresentativeRecord>,
}

async fn claim(State(state): State<Shared>, id: Result<Path<usize>, PathRejection>) -> Result<Json<ClaimView>, ApiError> {
    let Path(id) = id?;
    let c = state
        .bundle
        .claims
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no claim with id {id}")))?;
    Ok(Json(ClaimView {
        id: c.id,
        summary: c.summary.clone(),
        size: c.size,
        fallback: c.fallback,
        mean_stance: c.mean_stance,
        representatives: c.representatives.clone(),
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(state: ServiceState, static_dir: Option<PathBuf>) -> Router {
    let limit = state.limits.max_body_bytes;
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/generate", post(generate))
        .route("/api/stance", post(stance))
        .route("/api/graph", get(graph))
        .route("/api/claims/{id}", get(claim))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(Arc::new(state));
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

/// Serves on an already-bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Loads state, binds `host:port` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = load_state(&config)?;
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.clone(), source })?;
    let local: SocketAddr = listener.local_addr()?;
    log::info!("listening on http://{local}");
    let app = router(state, config.static_dir.clone());
    serve_on(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
