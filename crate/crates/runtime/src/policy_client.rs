//! How rollout workers reach a policy: in-process snapshots or a group of
//! inference servers behind `POST /generate`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use forge_core::policy::{GenerateRequest, GenerateResponse, Policy, PolicyError};

use crate::protocol::{codes, ErrorBody};

#[async_trait]
pub trait PolicyEndpoint: Send + Sync {
    async fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError>;
}

/// In-process policy. Each request runs on the snapshot current when it
/// arrived; `replace` swaps in new weights without blocking readers.
pub struct LocalPolicy {
    current: RwLock<Arc<dyn Policy>>,
}

impl LocalPolicy {
    pub fn new(policy: Arc<dyn Policy>) -> Self {
        Self {
            current: RwLock::new(policy),
        }
    }

    pub fn snapshot(&self) -> Arc<dyn Policy> {
        self.current.read().expect("policy lock").clone()
    }

    pub fn replace(&self, policy: Arc<dyn Policy>) {
        *self.current.write().expect("policy lock") = policy;
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version()
    }
}

#[async_trait]
impl PolicyEndpoint for LocalPolicy {
    async fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        self.snapshot().generate(req)
    }
}

/// Routes each request to the endpoint with the fewest requests in flight
/// and retries failures on a different endpoint.
#[derive(Debug)]
pub struct HttpPolicyClient {
    endpoints: Vec<String>,
    inflight: Vec<AtomicUsize>,
    retry_budget: usize,
    client: reqwest::Client,
}

impl HttpPolicyClient {
    pub fn new(endpoints: Vec<String>, timeout: Duration, retry_budget: usize) -> Self {
        assert!(!endpoints.is_empty(), "at least one policy endpoint is required");
        Self {
            inflight: endpoints.iter().map(|_| AtomicUsize::new(0)).collect(),
            endpoints: endpoints.into_iter().map(|e| e.trim_end_matches('/').to_string()).collect(),
            retry_budget,
            client: reqwest::Client::builder().timeout(timeout).build().expect("http client builds"),
        }
    }

    fn pick(&self, exclude: &[usize]) -> Option<usize> {
        (0..self.endpoints.len())
            .filter(|i| !exclude.contains(i))
            .min_by_key(|&i| self.inflight[i].load(Ordering::SeqCst))
    }

    async fn call(&self, i: usize, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        self.inflight[i].fetch_add(1, Ordering::SeqCst);
        let out = async {
            let resp = self
                .client
                .post(format!("{}/generate", self.endpoints[i]))
                .json(req)
                .send()
                .await
                .map_err(|e| PolicyError::Unavailable(e.to_string()))?;
            let status = resp.status();
            let bytes = resp.bytes().await.map_err(|e| PolicyError::Unavailable(e.to_string()))?;
            if status.is_success() {
                return serde_json::from_slice(&bytes).map_err(|e| PolicyError::Unavailable(format!("bad body: {e}")));
            }
            let body: Option<ErrorBody> = serde_json::from_slice(&bytes).ok();
            match body {
                Some(b) if b.code == codes::BAD_REQUEST => Err(PolicyError::BadRequest(b.message)),
                Some(b) => Err(PolicyError::Unavailable(b.message)),
                None => Err(PolicyError::Unavailable(format!("status {status}"))),
            }
        }
        .await;
        self.inflight[i].fetch_sub(1, Ordering::SeqCst);
        out
    }
}

#[async_trait]
impl PolicyEndpoint for HttpPolicyClient {
    async fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        let mut tried = Vec::new();
        let mut last = PolicyError::Unavailable("no endpoint tried".into());
        for _ in 0..=self.retry_budget {
            let Some(i) = self.pick(&tried) else { break };
            match self.call(i, req).await {
                Ok(r) => return Ok(r),
                Err(e @ PolicyError::BadRequest(_)) => return Err(e),
                Err(e) => {
                    log::warn!("policy endpoint {} failed: {e}", self.endpoints[i]);
                    tried.push(i);
                    last = e;
                }
            }
        }
        Err(last)
    }
}
