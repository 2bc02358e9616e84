use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::handler::HandlerWithoutStateExt;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::predict::{PredictError, Predictor};

/// Largest accepted request body.
pub const MAX_UPLOAD_BYTES: usize = 50 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    predictor: Option<Arc<Predictor>>,
    started: Instant,
}

impl AppState {
    pub fn new(predictor: Option<Predictor>) -> Self {
        Self {
            predictor: predictor.map(Arc::new),
            started: Instant::now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: Option<String>,
    pub feature_type: Option<String>,
    pub uptime_s: f64,
}

struct ApiError(PredictError);

impl From<PredictError> for ApiError {
    fn from(e: PredictError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        error_response(status, self.0.code(), &self.0.to_string())
    }
}

fn error_response(status: StatusCode, code: &str, message: &str) -> Response {
    (status, Json(json!({ "error": { "code": code, "message": message } }))).into_response()
}

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).not_found_service(not_found.into_service())),
        None => api.fallback(not_found),
    }
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn health(State(state): State<AppState>) -> Response {
    let uptime_s = state.started.elapsed().as_secs_f64();
    match &state.predictor {
        Some(p) => Json(Health {
            status: "ok".into(),
            model_id: Some(p.model_id().to_string()),
            feature_type: Some(p.feature_type().to_string()),
            uptime_s,
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "no model loaded".into(),
                model_id: None,
                feature_type: None,
                uptime_s,
            }),
        )
            .into_response(),
    }
}

async fn predict(State(state): State<AppState>, multipart: Result<Multipart, MultipartRejection>) -> Result<Response, ApiError> {
    let predictor = state.predictor.clone().ok_or(PredictError::NoModel)?;
    let mut multipart = multipart.map_err(|e| PredictError::BadRequest(e.body_text()))?;

    let (mut audio, mut embedding, mut name) = (None, None, String::from("upload"));
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Ok(error_response(e.status(), "bad_multipart", &e.body_text())),
        };
        let field_name = field.name().unwrap_or_default().to_string();
        if field_name == "audio" {
            if let Some(f) = field.file_name() {
                name = f.to_string();
            }
        }
        let bytes = match field.bytes().await {
            Ok(b) => b,
            Err(e) => return Ok(error_response(e.status(), "bad_multipart", &e.body_text())),
        };
        match field_name.as_str() {
            "audio" => audio = Some(bytes),
            "embedding" => embedding = Some(bytes),
            _ => {}
        }
    }

    let response = tokio::task::spawn_blocking(move || predictor.predict(audio.as_deref(), embedding.as_deref(), &name))
        .await
        .map_err(|e| PredictError::Internal(e.to_string()))??;
    Ok(Json(response).into_response())
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

pub async fn bind(host: &str, port: u16) -> std::io::Result<TcpListener> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{host}:{port}: {e}")))?;
    TcpListener::bind(addr).await
}
