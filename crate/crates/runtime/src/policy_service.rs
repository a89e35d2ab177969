//! Serves a policy over `POST /generate` (body `GenerateRequest`, response
//! `GenerateResponse`) and `GET /health`.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::policy::{GenerateRequest, PolicyError};

use crate::policy_client::{LocalPolicy, PolicyEndpoint};
use crate::protocol::{codes, ErrorBody};

async fn generate(State(p): State<Arc<LocalPolicy>>, Json(req): Json<GenerateRequest>) -> Response {
    match p.generate(&req).await {
        Ok(r) => Json(r).into_response(),
        Err(PolicyError::BadRequest(m)) => (StatusCode::BAD_REQUEST, Json(ErrorBody::new(codes::BAD_REQUEST, m))).into_response(),
        Err(PolicyError::Unavailable(m)) => (StatusCode::SERVICE_UNAVAILABLE, Json(ErrorBody::new(codes::POLICY_ERROR, m))).into_response(),
    }
}

async fn health(State(p): State<Arc<LocalPolicy>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "policy_version": p.version()}))
}

pub fn router(policy: Arc<LocalPolicy>) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/health", get(health))
        .with_state(policy)
}
