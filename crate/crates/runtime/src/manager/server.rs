//! REST front end of the manager and the matching client.
//!
//! | method | path        | body             | response                 |
//! |--------|-------------|------------------|--------------------------|
//! | POST   | `/lease`    | `LeaseRequest`   | `Grant`                  |
//! | POST   | `/release`  | `{"lease_id"}`   | `{"released": bool}`     |
//! | POST   | `/register` | `{"endpoint"}`   | `{"instance_id"}`        |
//! | POST   | `/sweep`    |                  | `SweepReport`            |
//! | GET    | `/pool`     |                  | `PoolView`               |
//! | GET    | `/metrics`  |                  | `ManagerMetrics`         |

use std::time::Duration;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Grant, InstanceId, LeaseId, LeaseProvider, LeaseRequest, ManagerError, ManagerHandle, ManagerMetrics, PoolView, SweepReport};
use crate::protocol::{codes, ErrorBody};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReleaseRequest {
    pub lease_id: LeaseId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReleaseResponse {
    pub released: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub endpoint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub instance_id: InstanceId,
}

fn error_parts(e: &ManagerError) -> (StatusCode, &str) {
    match e {
        ManagerError::Unreachable(_) => (StatusCode::BAD_GATEWAY, codes::UNREACHABLE),
        ManagerError::PoolExhausted => (StatusCode::SERVICE_UNAVAILABLE, codes::POOL_EXHAUSTED),
        ManagerError::UnknownLease(_) => (StatusCode::NOT_FOUND, codes::UNKNOWN_LEASE),
        ManagerError::Rejected { code, .. } => (StatusCode::UNPROCESSABLE_ENTITY, code.as_str()),
        ManagerError::Transport(_) | ManagerError::Stopped => (StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL),
    }
}

struct ApiError(ManagerError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = error_parts(&self.0);
        let message = match &self.0 {
            ManagerError::Rejected { message, .. } => message.clone(),
            other => other.to_string(),
        };
        (status, Json(ErrorBody::new(code, message))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn lease(State(m): State<ManagerHandle>, Json(req): Json<LeaseRequest>) -> ApiResult<Grant> {
    m.lease(req).await.map(Json).map_err(ApiError)
}

async fn release(State(m): State<ManagerHandle>, Json(req): Json<ReleaseRequest>) -> ApiResult<ReleaseResponse> {
    m.release(req.lease_id)
        .await
        .map(|released| Json(ReleaseResponse { released }))
        .map_err(ApiError)
}

async fn register(State(m): State<ManagerHandle>, Json(req): Json<RegisterRequest>) -> ApiResult<RegisterResponse> {
    m.register(req.endpoint)
        .await
        .map(|instance_id| Json(RegisterResponse { instance_id }))
        .map_err(ApiError)
}

async fn sweep(State(m): State<ManagerHandle>) -> ApiResult<SweepReport> {
    m.sweep().await.map(Json).map_err(ApiError)
}

async fn pool(State(m): State<ManagerHandle>) -> ApiResult<PoolView> {
    m.pool().await.map(Json).map_err(ApiError)
}

async fn metrics(State(m): State<ManagerHandle>) -> ApiResult<ManagerMetrics> {
    m.metrics().await.map(Json).map_err(ApiError)
}

pub fn router(manager: ManagerHandle) -> Router {
    Router::new()
        .route("/lease", post(lease))
        .route("/release", post(release))
        .route("/register", post(register))
        .route("/sweep", post(sweep))
        .route("/pool", get(pool))
        .route("/metrics", get(metrics))
        .with_state(manager)
}

#[derive(Debug, Clone)]
pub struct HttpManagerClient {
    base: String,
    client: reqwest::Client,
}

impl HttpManagerClient {
    /// `timeout` bounds each request, including a lease that waits in the queue.
    pub fn new(base: impl Into<String>, timeout: Duration) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            client: reqwest::Client::builder().timeout(timeout).build().expect("http client builds"),
        }
    }

    async fn send<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T, ManagerError> {
        let resp = req.send().await.map_err(|e| ManagerError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| ManagerError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ManagerError::Transport(format!("bad body: {e}")));
        }
        let body: ErrorBody = serde_json::from_slice(&bytes).map_err(|_| ManagerError::Transport(format!("status {status}")))?;
        Err(match body.code.as_str() {
            codes::POOL_EXHAUSTED => ManagerError::PoolExhausted,
            codes::UNREACHABLE => ManagerError::Unreachable(body.message),
            codes::UNKNOWN_LEASE => ManagerError::UnknownLease(0),
            codes::INTERNAL => ManagerError::Transport(body.message),
            _ => ManagerError::Rejected {
                code: body.code,
                message: body.message,
            },
        })
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> reqwest::RequestBuilder {
        self.client.post(format!("{}{path}", self.base)).json(body)
    }

    pub async fn register(&self, endpoint: &str) -> Result<InstanceId, ManagerError> {
        let r: RegisterResponse = self
            .send(self.post("/register", &RegisterRequest { endpoint: endpoint.into() }))
            .await?;
        Ok(r.instance_id)
    }

    pub async fn sweep(&self) -> Result<SweepReport, ManagerError> {
        self.send(self.client.post(format!("{}/sweep", self.base))).await
    }

    pub async fn pool(&self) -> Result<PoolView, ManagerError> {
        self.send(self.client.get(format!("{}/pool", self.base))).await
    }

    pub async fn metrics(&self) -> Result<ManagerMetrics, ManagerError> {
        self.send(self.client.get(format!("{}/metrics", self.base))).await
    }
}

#[async_trait]
impl LeaseProvider for HttpManagerClient {
    async fn lease(&self, req: LeaseRequest) -> Result<Grant, ManagerError> {
        self.send(self.post("/lease", &req)).await
    }

    async fn release(&self, lease: LeaseId) -> Result<bool, ManagerError> {
        let r: Result<ReleaseResponse, _> = self.send(self.post("/release", &ReleaseRequest { lease_id: lease })).await;
        match r {
            Ok(r) => Ok(r.released),
            Err(ManagerError::UnknownLease(_)) => Err(ManagerError::UnknownLease(lease)),
            Err(e) => Err(e),
        }
    }
}
