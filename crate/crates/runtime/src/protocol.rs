//! JSON bodies of the environment service, manager and policy endpoints.
//!
//! Environment service:
//!
//! | method | path           | body / query            | response            |
//! |--------|----------------|-------------------------|---------------------|
//! | POST   | `/reset`       | `ResetRequest`          | `ResetResponse`     |
//! | POST   | `/step`        | `StepRequest`           | `StepResponse`      |
//! | GET    | `/observation` | `?session=<id>`         | `Observation`       |
//! | POST   | `/evaluate`    | `SessionRequest`        | `Verdict`           |
//! | POST   | `/close`       | `SessionRequest`        | `{"closed": true}`  |
//! | GET    | `/health`      |                         | `HealthReport`      |
//!
//! Errors are `ErrorBody` with a stable `code`.

use forge_core::action::Action;
use forge_core::observation::Observation;
use forge_core::trajectory::EnvStatus;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResetRequest {
    pub task_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetResponse {
    pub session: String,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub session: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub observation: Observation,
    pub env_status: EnvStatus,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub session: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: String,
    pub active_episodes: usize,
    pub uptime_s: f64,
}

/// Machine-readable error codes shared by every service.
pub mod codes {
    pub const UNKNOWN_TASK: &str = "UNKNOWN_TASK";
    pub const UNKNOWN_SESSION: &str = "UNKNOWN_SESSION";
    pub const SESSION_EXPIRED: &str = "SESSION_EXPIRED";
    pub const EPISODE_FINISHED: &str = "EPISODE_FINISHED";
    pub const BACKEND_UNAVAILABLE: &str = "BACKEND_UNAVAILABLE";
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const UNKNOWN_LEASE: &str = "UNKNOWN_LEASE";
    pub const POOL_EXHAUSTED: &str = "POOL_EXHAUSTED";
    pub const UNREACHABLE: &str = "UNREACHABLE";
    pub const POLICY_ERROR: &str = "POLICY_ERROR";
    pub const INTERNAL: &str = "INTERNAL";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }
}
