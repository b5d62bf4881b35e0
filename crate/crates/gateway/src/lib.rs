//! HTTP front end for the screener: a bounded worker pool fed FIFO by an
//! async listener, plus a durable request log.
//!
//! Routes: `POST /v1/screen`, `GET /v1/health`, `GET /v1/stats`.

mod log;
mod pool;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biasscreen_core::screener::{ScreenError, ScreenResult, ScreenerEngine, DEFAULT_MAX_BYTES, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tower_http::cors::CorsLayer;

pub use crate::log::{nearest_rank, Latency, RequestLog, RequestLogEntry, Stats};
pub use crate::pool::WorkerPool;

pub const DEFAULT_WORKERS: usize = 8;
/// Header carrying the screening wall time, kept out of the JSON body.
pub const TIMING_HEADER: &str = "x-screen-time-ms";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub workers: usize,
    /// Used when a request names no threshold.
    pub threshold: f64,
    pub log_path: PathBuf,
    /// Largest accepted `text`, in bytes.
    pub max_body_bytes: usize,
    pub cors: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: ([127, 0, 0, 1], 8080).into(),
            checkpoint: PathBuf::from("classifier.ckpt"),
            vocab: PathBuf::from("vocab.txt"),
            workers: DEFAULT_WORKERS,
            threshold: DEFAULT_THRESHOLD,
            log_path: PathBuf::from("requests.jsonl"),
            max_body_bytes: DEFAULT_MAX_BYTES,
            cors: true,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.workers == 0 {
            return Err(GatewayError::Config("worker count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(GatewayError::Config(format!("threshold {} not in [0, 1]", self.threshold)));
        }
        if self.max_body_bytes == 0 {
            return Err(GatewayError::Config("max body size must be positive".into()));
        }
        Ok(())
    }

    /// Transport cap on the raw JSON body. Escaping can inflate text up to
    /// six-fold, so the exact limit is enforced on the decoded text.
    fn transport_limit(&self) -> usize {
        self.max_body_bytes.saturating_mul(6).saturating_add(64 * 1024)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRequest {
    pub text: String,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub client: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceStatus {
    Loading,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: ServiceStatus,
    pub checkpoint_id: Option<String>,
    pub uptime_s: f64,
    pub parallelism: usize,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub status: u16,
    pub error: String,
}

/// Shared service state. The engine is installed once and never mutated.
pub struct AppState {
    config: GatewayConfig,
    engine: OnceLock<Arc<ScreenerEngine>>,
    load_error: Mutex<Option<String>>,
    pool: WorkerPool,
    log: RequestLog,
    started: Instant,
}

impl AppState {
    /// A service in the loading state.
    pub fn new(config: GatewayConfig) -> Result<Arc<Self>, GatewayError> {
        config.validate()?;
        let log = RequestLog::open(&config.log_path)?;
        Ok(Arc::new(Self {
            pool: WorkerPool::new(config.workers),
            config,
            engine: OnceLock::new(),
            load_error: Mutex::new(None),
            log,
            started: Instant::now(),
        }))
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn stats(&self) -> Stats {
        self.log.stats()
    }

    /// Makes the service ready. A second install is refused.
    pub fn install(&self, engine: ScreenerEngine) -> Result<(), GatewayError> {
        let engine = engine.with_max_bytes(self.config.max_body_bytes);
        self.engine.set(Arc::new(engine)).map_err(|_| GatewayError::Config("a model is already installed".into()))
    }

    pub fn fail(&self, msg: impl Into<String>) {
        *self.load_error.lock().expect("load error lock") = Some(msg.into());
    }

    pub fn engine(&self) -> Option<&Arc<ScreenerEngine>> {
        self.engine.get()
    }

    pub fn health(&self) -> Health {
        let error = self.load_error.lock().expect("load error lock").clone();
        let engine = self.engine.get();
        let status = match (engine, &error) {
            (Some(_), _) => ServiceStatus::Ready,
            (None, Some(_)) => ServiceStatus::Failed,
            (None, None) => ServiceStatus::Loading,
        };
        Health {
            status,
            checkpoint_id: engine.map(|e| e.checkpoint_id().to_string()),
            uptime_s: self.started.elapsed().as_secs_f64(),
            parallelism: self.config.workers,
            threshold: self.config.threshold,
            error,
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = state.config.cors;
    let limit = state.config.transport_limit();
    let app = Router::new()
        .route("/v1/screen", post(screen))
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    if cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(app.health())
}

async fn stats(State(app): State<Arc<AppState>>) -> Json<Stats> {
    Json(app.stats())
}

struct ApiError {
    status: StatusCode,
    msg: String,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self { status, msg: msg.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { status: self.status.as_u16(), error: self.msg })).into_response()
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

async fn screen(State(app): State<Arc<AppState>>, body: Result<Bytes, BytesRejection>) -> Response {
    let started = Instant::now();
    let (digest, client, outcome) = match body {
        Err(e) => (String::new(), None, Err(ApiError::new(e.status(), e.body_text()))),
        Ok(bytes) => match serde_json::from_slice::<ScreenRequest>(&bytes) {
            Err(e) => (digest(&bytes), None, Err(ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))),
            Ok(req) => (digest(req.text.as_bytes()), req.client.clone(), run(&app, req).await),
        },
    };
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    let (status, response, result) = match outcome {
        Ok(result) => {
            let body = serde_json::to_vec(&result).expect("result serializes");
            let mut resp = ([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response();
            let ms = format!("{:.3}", result.elapsed.as_secs_f64() * 1e3);
            resp.headers_mut().insert(TIMING_HEADER, HeaderValue::from_str(&ms).expect("ascii header"));
            (StatusCode::OK, resp, Some(result))
        }
        Err(e) => (e.status, e.into_response(), None),
    };
    let entry = RequestLogEntry::new(digest, client, status.as_u16(), result.as_ref(), latency_ms);
    if let Err(e) = app.log.append(&entry) {
        ::log::error!("request log {}: {e}", app.log.path().display());
        return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "request log unavailable").into_response();
    }
    response
}

async fn run(app: &Arc<AppState>, req: ScreenRequest) -> Result<ScreenResult, ApiError> {
    if req.text.len() > app.config.max_body_bytes {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("text is {} bytes, limit is {}", req.text.len(), app.config.max_body_bytes),
        ));
    }
    let threshold = req.threshold.unwrap_or(app.config.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("threshold {threshold} not in [0, 1]")));
    }
    let Some(engine) = app.engine.get().cloned() else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "model not loaded"));
    };
    let text = req.text;
    let done = app.pool.execute(move || engine.screen_text_with(&text, threshold));
    match done.await {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(ScreenError::TooLarge { size, max })) => {
            Err(ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("text is {size} bytes, limit is {max}")))
        }
        Ok(Err(ScreenError::Config(m))) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m)),
        Ok(Err(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        Err(_) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "screening worker failed")),
    }
}

/// A server accepting connections in the background.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub handle: JoinHandle<std::io::Result<()>>,
}

/// Binds `addr` and serves `state` on the current runtime.
pub async fn start(state: Arc<AppState>, addr: SocketAddr) -> Result<RunningServer, GatewayError> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move { axum::serve(listener, router(state)).await });
    Ok(RunningServer { addr, handle })
}

/// Starts listening at once in the loading state, loads the checkpoint in
/// the background, then serves until interrupted.
pub async fn serve(config: GatewayConfig) -> Result<(), GatewayError> {
    let state = AppState::new(config)?;
    let listener = TcpListener::bind(state.config.bind).await?;
    ::log::info!("listening on {}", listener.local_addr()?);
    let loader = Arc::clone(&state);
    tokio::task::spawn_blocking(move || {
        let c = &loader.config;
        match ScreenerEngine::load(&c.checkpoint, &c.vocab).map_err(GatewayError::from).and_then(|e| loader.install(e)) {
            Ok(()) => ::log::info!("model {} ready", loader.health().checkpoint_id.unwrap_or_default()),
            Err(e) => {
                ::log::error!("model load failed: {e}");
                loader.fail(e.to_string());
            }
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
