//! Environment manager: leases pooled environment instances, reuses them
//! across rollouts, health-probes them and backfills failures from standby.

mod actor;
pub mod server;
pub mod state;

use std::time::Duration;

use async_trait::async_trait;
use forge_core::observation::Observation;
use serde::{Deserialize, Serialize};

pub use actor::ManagerHandle;
pub use server::HttpManagerClient;
pub use state::{audit, AuditReport, Event, InstanceId, InstanceState, Lease, LeaseId, LoggedEvent, PoolCounts, PoolState};

pub const STANDBY_DEPLETED: &str = "STANDBY_DEPLETED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManagerConfig {
    /// Overrides the default floor of `max(2, ceil(5% of pool))`.
    #[serde(default)]
    pub standby_floor: Option<usize>,
    #[serde(default = "default_lease_ttl_s")]
    pub lease_ttl_s: f64,
    /// Probe attempts per instance within one sweep.
    #[serde(default = "default_three")]
    pub probe_attempts: u32,
    #[serde(default = "default_three")]
    pub probe_failure_threshold: u32,
    #[serde(default = "default_two")]
    pub reset_failure_threshold: u32,
    #[serde(default = "default_sweep_period_s")]
    pub sweep_period_s: f64,
}

fn default_lease_ttl_s() -> f64 {
    600.0
}
fn default_three() -> u32 {
    3
}
fn default_two() -> u32 {
    2
}
fn default_sweep_period_s() -> f64 {
    1.0
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            standby_floor: None,
            lease_ttl_s: default_lease_ttl_s(),
            probe_attempts: default_three(),
            probe_failure_threshold: default_three(),
            reset_failure_threshold: default_two(),
            sweep_period_s: default_sweep_period_s(),
        }
    }
}

impl ManagerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lease_ttl_s > 0.0 && self.sweep_period_s > 0.0) {
            return Err("lease_ttl_s and sweep_period_s must be positive".into());
        }
        if self.probe_attempts == 0 || self.probe_failure_threshold == 0 || self.reset_failure_threshold == 0 {
            return Err("probe and reset thresholds must be at least 1".into());
        }
        Ok(())
    }

    pub fn sweep_period(&self) -> Duration {
        Duration::from_secs_f64(self.sweep_period_s)
    }

    /// Standby floor for a pool of `n` registered instances, never more
    /// than half the pool so small pools stay usable.
    pub fn floor_for(&self, n: usize) -> usize {
        let floor = self.standby_floor.unwrap_or_else(|| 2.max(n.div_ceil(20)));
        floor.min(n / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManagerError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("no healthy instance left in the pool")]
    PoolExhausted,
    #[error("unknown lease {0}")]
    UnknownLease(LeaseId),
    #[error("environment rejected the request: {code}: {message}")]
    Rejected { code: String, message: String },
    #[error("manager transport failure: {0}")]
    Transport(String),
    #[error("manager stopped")]
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseRequest {
    pub task_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Higher is served first; FIFO within a priority.
    #[serde(default)]
    pub priority: i32,
}

impl LeaseRequest {
    pub fn new(task_id: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            task_id: task_id.into(),
            seed,
            priority: 0,
        }
    }
}

/// A granted lease on an instance that has already been reset for the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub lease_id: LeaseId,
    pub instance_id: InstanceId,
    pub endpoint: String,
    pub session: String,
    pub observation: Observation,
    pub granted_at: Duration,
    pub deadline: Duration,
}

/// What rollout workers need from a manager, local or remote.
#[async_trait]
pub trait LeaseProvider: Send + Sync {
    async fn lease(&self, req: LeaseRequest) -> Result<Grant, ManagerError>;
    /// Returns whether this call ended the lease (false for a repeat).
    async fn release(&self, lease: LeaseId) -> Result<bool, ManagerError>;
}

/// Fixed-bucket latency histogram in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bounds_ms: Vec<f64>,
    /// One count per bound plus an overflow bucket.
    pub counts: Vec<u64>,
    pub count: u64,
    pub sum_ms: f64,
    pub max_ms: f64,
}

impl Default for Histogram {
    fn default() -> Self {
        let bounds_ms = vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 5000.0];
        Self {
            counts: vec![0; bounds_ms.len() + 1],
            bounds_ms,
            count: 0,
            sum_ms: 0.0,
            max_ms: 0.0,
        }
    }
}

impl Histogram {
    pub fn observe(&mut self, d: Duration) {
        let ms = d.as_secs_f64() * 1e3;
        let bucket = self.bounds_ms.iter().position(|&b| ms <= b).unwrap_or(self.bounds_ms.len());
        self.counts[bucket] += 1;
        self.count += 1;
        self.sum_ms += ms;
        self.max_ms = self.max_ms.max(ms);
    }

    pub fn mean_ms(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_ms / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManagerMetrics {
    pub lease_latency: Histogram,
    pub grants: u64,
    pub releases: u64,
    /// Grants on an instance that served an earlier lease.
    pub reuse_count: u64,
    pub failure_count: u64,
    /// Instances brought into existence (first registrations only).
    pub creation_count: u64,
    pub recoveries: u64,
    pub promotions: u64,
    pub expired_leases: u64,
    pub sweeps: u64,
    pub queue_depth: usize,
    pub pool: PoolCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub instance: InstanceId,
    pub from: InstanceState,
    pub to: InstanceState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub at: Duration,
    pub probed: usize,
    pub transitions: Vec<Transition>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolView {
    pub counts: PoolCounts,
    pub standby_floor: usize,
    pub instances: Vec<state::InstanceRecord>,
    pub active_leases: usize,
}
