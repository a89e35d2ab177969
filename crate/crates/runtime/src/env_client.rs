//! Client side of the environment protocol. Rollout workers and the
//! manager only ever talk to environments through `EnvClient`.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use forge_core::action::Action;
use forge_core::observation::Observation;
use forge_core::verify::Verdict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::host::HostError;
use crate::protocol::{codes, ErrorBody, HealthReport, ResetRequest, ResetResponse, SessionRequest, StepRequest, StepResponse};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvClientError {
    /// The service answered with a structured error.
    #[error("{code} ({status}): {message}")]
    Rejected { status: u16, code: String, message: String },
    /// The endpoint could not be reached or answered garbage.
    #[error("transport failure: {0}")]
    Transport(String),
}

impl EnvClientError {
    /// True when the instance itself is unhealthy, as opposed to a
    /// well-formed rejection of the request.
    pub fn is_fault(&self) -> bool {
        match self {
            EnvClientError::Transport(_) => true,
            EnvClientError::Rejected { code, .. } => code == codes::BACKEND_UNAVAILABLE,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            EnvClientError::Rejected { code, .. } => code,
            EnvClientError::Transport(_) => codes::UNREACHABLE,
        }
    }
}

impl From<HostError> for EnvClientError {
    fn from(e: HostError) -> Self {
        EnvClientError::Rejected {
            status: e.status,
            code: e.code.to_string(),
            message: e.message,
        }
    }
}

#[async_trait]
pub trait EnvClient: Send + Sync {
    fn endpoint(&self) -> &str;
    async fn reset(&self, task_id: &str, seed: Option<u64>) -> Result<ResetResponse, EnvClientError>;
    async fn step(&self, session: &str, action: &Action) -> Result<StepResponse, EnvClientError>;
    async fn observation(&self, session: &str) -> Result<Observation, EnvClientError>;
    async fn evaluate(&self, session: &str) -> Result<Verdict, EnvClientError>;
    async fn close(&self, session: &str) -> Result<(), EnvClientError>;
    async fn health(&self) -> Result<HealthReport, EnvClientError>;
}

/// Resolves an endpoint string to a client.
pub trait Connector: Send + Sync {
    fn connect(&self, endpoint: &str) -> Result<Arc<dyn EnvClient>, EnvClientError>;
}

#[derive(Debug, Clone)]
pub struct HttpEnvClient {
    base: String,
    client: reqwest::Client,
}

impl HttpEnvClient {
    pub fn new(base: impl Into<String>, client: reqwest::Client) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            client,
        }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, EnvClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| EnvClientError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| EnvClientError::Transport(format!("bad body: {e}")));
        }
        let body: ErrorBody = serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| ErrorBody::new(codes::INTERNAL, String::from_utf8_lossy(&bytes).into_owned()));
        Err(EnvClientError::Rejected {
            status: status.as_u16(),
            code: body.code,
            message: body.message,
        })
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, EnvClientError> {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .map_err(|e| EnvClientError::Transport(e.to_string()))?;
        Self::decode(resp).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, &str)]) -> Result<T, EnvClientError> {
        let resp = self
            .client
            .get(format!("{}{path}", self.base))
            .query(query)
            .send()
            .await
            .map_err(|e| EnvClientError::Transport(e.to_string()))?;
        Self::decode(resp).await
    }
}

#[async_trait]
impl EnvClient for HttpEnvClient {
    fn endpoint(&self) -> &str {
        &self.base
    }

    async fn reset(&self, task_id: &str, seed: Option<u64>) -> Result<ResetResponse, EnvClientError> {
        let req = ResetRequest {
            task_id: task_id.to_string(),
            seed,
        };
        self.post("/reset", &req).await
    }

    async fn step(&self, session: &str, action: &Action) -> Result<StepResponse, EnvClientError> {
        let req = StepRequest {
            session: session.to_string(),
            action: action.clone(),
        };
        self.post("/step", &req).await
    }

    async fn observation(&self, session: &str) -> Result<Observation, EnvClientError> {
        self.get("/observation", &[("session", session)]).await
    }

    async fn evaluate(&self, session: &str) -> Result<Verdict, EnvClientError> {
        self.post("/evaluate", &SessionRequest { session: session.into() }).await
    }

    async fn close(&self, session: &str) -> Result<(), EnvClientError> {
        let _: serde_json::Value = self.post("/close", &SessionRequest { session: session.into() }).await?;
        Ok(())
    }

    async fn health(&self) -> Result<HealthReport, EnvClientError> {
        self.get("/health", &[]).await
    }
}

/// Connects to `http://` endpoints with a shared connection pool.
#[derive(Debug, Clone)]
pub struct HttpConnector {
    client: reqwest::Client,
}

impl HttpConnector {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        Self { client }
    }
}

impl Default for HttpConnector {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

impl Connector for HttpConnector {
    fn connect(&self, endpoint: &str) -> Result<Arc<dyn EnvClient>, EnvClientError> {
        if !endpoint.starts_with("http://") {
            return Err(EnvClientError::Transport(format!("unsupported endpoint `{endpoint}`")));
        }
        Ok(Arc::new(HttpEnvClient::new(endpoint, self.client.clone())))
    }
}

/// Tries each connector in turn.
#[derive(Clone, Default)]
pub struct AnyConnector {
    inner: Vec<Arc<dyn Connector>>,
}

impl AnyConnector {
    pub fn new(inner: Vec<Arc<dyn Connector>>) -> Self {
        Self { inner }
    }
}

impl Connector for AnyConnector {
    fn connect(&self, endpoint: &str) -> Result<Arc<dyn EnvClient>, EnvClientError> {
        let mut last = EnvClientError::Transport(format!("no connector for `{endpoint}`"));
        for c in &self.inner {
            match c.connect(endpoint) {
                Ok(client) => return Ok(client),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}
