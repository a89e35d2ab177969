//! REST front end of an `EnvHost`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::host::{EnvHost, HostError};
use crate::protocol::{ErrorBody, ResetRequest, SessionRequest, StepRequest};

impl IntoResponse for HostError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody::new(self.code, self.message))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: String,
}

async fn reset(State(h): State<Arc<EnvHost>>, Json(req): Json<ResetRequest>) -> Response {
    h.reset(&req.task_id, req.seed).map(Json).into_response()
}

async fn step(State(h): State<Arc<EnvHost>>, Json(req): Json<StepRequest>) -> Response {
    h.step(&req.session, &req.action).await.map(Json).into_response()
}

async fn observation(State(h): State<Arc<EnvHost>>, Query(q): Query<SessionQuery>) -> Response {
    h.observation(&q.session).await.map(Json).into_response()
}

async fn evaluate(State(h): State<Arc<EnvHost>>, Json(req): Json<SessionRequest>) -> Response {
    h.evaluate(&req.session).await.map(Json).into_response()
}

async fn close(State(h): State<Arc<EnvHost>>, Json(req): Json<SessionRequest>) -> Response {
    h.close(&req.session)
        .await
        .map(|_| Json(serde_json::json!({"closed": true})))
        .into_response()
}

async fn health(State(h): State<Arc<EnvHost>>) -> Response {
    h.health().map(Json).into_response()
}

pub fn router(host: Arc<EnvHost>) -> Router {
    Router::new()
        .route("/reset", post(reset))
        .route("/step", post(step))
        .route("/observation", get(observation))
        .route("/evaluate", post(evaluate))
        .route("/close", post(close))
        .route("/health", get(health))
        .with_state(host)
}

/// A running HTTP service; dropping the handle does not stop it.
#[derive(Debug)]
pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}

/// Serves `app` on `bind` (use port 0 for an ephemeral port).
pub async fn serve_router(bind: &str, app: Router) -> std::io::Result<ServiceHandle> {
    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let shutdown = async {
            let _ = rx.await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            log::error!("service on {addr} stopped: {e}");
        }
    });
    Ok(ServiceHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

pub async fn serve(bind: &str, host: Arc<EnvHost>) -> std::io::Result<ServiceHandle> {
    serve_router(bind, router(host)).await
}
