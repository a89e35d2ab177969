//! The asynchronous agent loop: lease an environment, query the policy per
//! step, execute, record, and restart on a fresh lease when an environment
//! dies underneath a rollout.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::{Arc, Mutex};

use forge_core::action::{parse_action, Action, Point};
use forge_core::env::TaskSuite;
use forge_core::grpo::{GroupMember, RolloutGroup};
use forge_core::policy::{notes_from_aux, GenerateRequest, Note, PolicyError};
use forge_core::task::TaskSpec;
use forge_core::trajectory::{render_history, write_jsonl, EnvStatus, Step, Trajectory};
use forge_core::verify::{trajectory_reward, RewardConfig};
use futures::stream::{FuturesUnordered, StreamExt};
use serde::{Deserialize, Serialize};

use crate::env_client::{Connector, EnvClient, EnvClientError};
use crate::manager::{Grant, LeaseProvider, LeaseRequest, ManagerError};
use crate::policy_client::PolicyEndpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    #[serde(default = "default_max_env_steps")]
    pub max_env_steps: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_image_scale")]
    pub image_scale: f64,
    #[serde(default = "default_history_window")]
    pub history_window: usize,
    /// Fresh leases a member may fall back to after environment faults.
    #[serde(default = "default_backup_sessions")]
    pub backup_sessions: usize,
    /// Reset every member's world with its own seed instead of the task's.
    #[serde(default)]
    pub randomize_env_seed: bool,
    #[serde(default)]
    pub reward: RewardConfig,
}

fn default_max_env_steps() -> usize {
    50
}
fn default_group_size() -> usize {
    16
}
fn default_image_scale() -> f64 {
    0.5
}
fn default_history_window() -> usize {
    8
}
fn default_backup_sessions() -> usize {
    1
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_env_steps: default_max_env_steps(),
            group_size: default_group_size(),
            image_scale: default_image_scale(),
            history_window: default_history_window(),
            backup_sessions: default_backup_sessions(),
            randomize_env_seed: false,
            reward: RewardConfig::default(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_env_steps == 0 {
            return Err("max_env_steps must be positive".into());
        }
        if self.group_size < 2 {
            return Err("group_size must be at least 2 for advantage normalization".into());
        }
        if !(self.image_scale > 0.0 && self.image_scale <= 1.0) {
            return Err("image_scale must lie in (0, 1]".into());
        }
        if self.history_window == 0 {
            return Err("history_window must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    Config(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("lease failed: {0}")]
    Lease(#[from] ManagerError),
    #[error("policy failed: {0}")]
    Policy(#[from] PolicyError),
    #[error("policy version changed mid-trajectory ({0:?})")]
    MixedVersions(BTreeSet<u64>),
    #[error("group for `{task_id}` aborted: {faulted} of {group_size} members hit unrecoverable environment faults")]
    GroupAborted { task_id: String, faulted: usize, group_size: usize },
    #[error("member exhausted its backup sessions: {0}")]
    EnvFault(String),
    #[error("sink rejected the group: {0}")]
    Sink(String),
}

/// A completed group with bookkeeping about how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRun {
    pub group: RolloutGroup,
    /// Members restarted from step 0 on a backup lease.
    pub restarts: usize,
    /// Members resubmitted after exhausting their backup sessions.
    pub resubmitted: usize,
    pub env_steps: usize,
}

/// Receives groups as they complete.
pub trait TrajectorySink: Send + Sync {
    fn accept(&self, index: usize, run: &GroupRun) -> Result<(), String>;
}

/// Collects groups in memory, optionally appending JSON lines, and rejects
/// trajectories produced by any policy version but the expected one.
#[derive(Default)]
pub struct BatchSink {
    expected_version: Option<u64>,
    writer: Option<Mutex<Box<dyn Write + Send>>>,
    accepted: Mutex<Vec<usize>>,
}

impl BatchSink {
    pub fn new(expected_version: Option<u64>) -> Self {
        Self {
            expected_version,
            ..Self::default()
        }
    }

    pub fn with_writer(mut self, w: Box<dyn Write + Send>) -> Self {
        self.writer = Some(Mutex::new(w));
        self
    }

    /// Group indices in completion order.
    pub fn completion_order(&self) -> Vec<usize> {
        self.accepted.lock().expect("sink lock").clone()
    }
}

impl TrajectorySink for BatchSink {
    fn accept(&self, index: usize, run: &GroupRun) -> Result<(), String> {
        if let Some(v) = self.expected_version {
            let fresh = run.group.members.iter().filter(|m| !m.replay_augmented);
            if let Some(m) = fresh.into_iter().find(|m| m.trajectory.policy_version != v) {
                return Err(format!(
                    "trajectory for `{}` came from policy version {}, batch is on {v}",
                    run.group.task_id, m.trajectory.policy_version
                ));
            }
        }
        if let Some(w) = &self.writer {
            let trajs: Vec<Trajectory> = run.group.members.iter().map(|m| m.trajectory.clone()).collect();
            let mut w = w.lock().expect("sink writer lock");
            write_jsonl(&mut *w, &trajs).map_err(|e| e.to_string())?;
        }
        self.accepted.lock().expect("sink lock").push(index);
        Ok(())
    }
}

/// SplitMix64 finalizer for deriving independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum EpisodeError {
    Env(EnvClientError),
    Fatal(RolloutError),
}

struct Member {
    trajectory: Trajectory,
    restarts: usize,
}

#[derive(Clone)]
pub struct RolloutWorker {
    suite: Arc<TaskSuite>,
    leases: Arc<dyn LeaseProvider>,
    connector: Arc<dyn Connector>,
    policy: Arc<dyn PolicyEndpoint>,
    cfg: RolloutConfig,
}

impl RolloutWorker {
    pub fn new(
        suite: Arc<TaskSuite>,
        leases: Arc<dyn LeaseProvider>,
        connector: Arc<dyn Connector>,
        policy: Arc<dyn PolicyEndpoint>,
        cfg: RolloutConfig,
    ) -> Result<Self, RolloutError> {
        cfg.validate().map_err(RolloutError::Config)?;
        Ok(Self {
            suite,
            leases,
            connector,
            policy,
            cfg,
        })
    }

    pub fn config(&self) -> &RolloutConfig {
        &self.cfg
    }

    fn to_full_resolution(&self, action: &Action, width: u32, height: u32) -> Action {
        let s = self.cfg.image_scale;
        action.map_points(|p| Point {
            x: ((p.x as f64 / s).round() as u32).min(width.saturating_sub(1)),
            y: ((p.y as f64 / s).round() as u32).min(height.saturating_sub(1)),
        })
    }

    async fn episode(&self, task: &TaskSpec, grant: &Grant, client: &dyn EnvClient, seed: u64) -> Result<Trajectory, EpisodeError> {
        let mut traj = Trajectory::new(task.task_id.clone(), self.cfg.max_env_steps);
        let mut versions = BTreeSet::new();
        let mut notes: Vec<Note> = Vec::new();
        let mut obs = grant.observation.clone();
        for step in 0..self.cfg.max_env_steps {
            let req = GenerateRequest {
                task_id: task.task_id.clone(),
                instruction: task.instruction.clone(),
                history: render_history(&traj, self.cfg.history_window),
                observation: obs.scaled(self.cfg.image_scale),
                image_refs: vec![obs.hash().to_string()],
                notes: notes.clone(),
                tools: task.tools.clone(),
                error_summary: None,
                step_index: step,
                seed: mix_seed(seed, step as u64),
            };
            let resp = self
                .policy
                .generate(&req)
                .await
                .map_err(|e| EpisodeError::Fatal(e.into()))?;
            versions.insert(resp.policy_version);
            let (action, malformed) = match parse_action(&resp.text) {
                Ok(a) => (self.to_full_resolution(&a, obs.width(), obs.height()), false),
                Err(_) => (Action::Wait, true),
            };
            let out = client.step(&grant.session, &action).await.map_err(EpisodeError::Env)?;
            let env_status = if malformed { EnvStatus::ActionFailed } else { out.env_status };
            let terminal = action.is_terminate();
            traj.push(Step {
                index: step,
                observation: obs,
                model_output: resp.text,
                action,
                env_status,
                sample: resp.sample,
            })
            .expect("loop respects the step budget");
            notes.extend(notes_from_aux(&out.observation.aux));
            obs = out.observation;
            if terminal {
                break;
            }
        }
        if versions.len() > 1 {
            return Err(EpisodeError::Fatal(RolloutError::MixedVersions(versions)));
        }
        traj.policy_version = versions.into_iter().next().unwrap_or_default();
        let verdict = client.evaluate(&grant.session).await.map_err(EpisodeError::Env)?;
        traj.reward = trajectory_reward(verdict.success, traj.actions(), &self.cfg.reward);
        traj.verdict = Some(verdict);
        Ok(traj)
    }

    /// One member rollout. Environment faults restart it from step 0 on a
    /// new lease, up to `backup_sessions` times.
    async fn member(&self, task: &TaskSpec, seed: u64) -> Result<Member, RolloutError> {
        let mut restarts = 0;
        loop {
            let env_seed = self.cfg.randomize_env_seed.then_some(seed);
            let grant = self.leases.lease(LeaseRequest::new(task.task_id.clone(), env_seed)).await?;
            let result = match self.connector.connect(&grant.endpoint) {
                Ok(client) => self.episode(task, &grant, client.as_ref(), seed).await,
                Err(e) => Err(EpisodeError::Env(e)),
            };
            if let Err(e) = self.leases.release(grant.lease_id).await {
                log::warn!("release of lease {} failed: {e}", grant.lease_id);
            }
            match result {
                Ok(trajectory) => return Ok(Member { trajectory, restarts }),
                Err(EpisodeError::Fatal(e)) => return Err(e),
                Err(EpisodeError::Env(e)) if restarts < self.cfg.backup_sessions => {
                    log::debug!("member of `{}` lost its environment ({e}); restarting on a backup lease", task.task_id);
                    restarts += 1;
                }
                Err(EpisodeError::Env(e)) => return Err(RolloutError::EnvFault(e.to_string())),
            }
        }
    }

    async fn members(&self, task: &TaskSpec, seeds: &[u64]) -> Vec<Result<Member, RolloutError>> {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let me = self.clone();
                let task = task.clone();
                tokio::spawn(async move { me.member(&task, seed).await })
            })
            .collect();
        let mut out = Vec::with_capacity(handles.len());
        for h in handles {
            out.push(h.await.unwrap_or_else(|e| Err(RolloutError::EnvFault(format!("member task panicked: {e}")))));
        }
        out
    }

    /// Produces exactly `group_size` trajectories for `task_id`, all
    /// concurrently on distinct leases.
    ///
    /// Members that exhaust their backup sessions are resubmitted once as a
    /// whole; the group aborts if more than half of them faulted, or if a
    /// resubmitted member faults again.
    pub async fn run_group(&self, task_id: &str, group_seed: u64) -> Result<GroupRun, RolloutError> {
        let task = self
            .suite
            .task(task_id)
            .cloned()
            .ok_or_else(|| RolloutError::UnknownTask(task_id.to_string()))?;
        let g = self.cfg.group_size;
        let seeds: Vec<u64> = (0..g as u64).map(|i| mix_seed(group_seed, i)).collect();
        let mut results = self.members(&task, &seeds).await;
        let faulted: Vec<usize> = (0..g).filter(|&i| matches!(results[i], Err(RolloutError::EnvFault(_)))).collect();
        if faulted.len() * 2 > g {
            return Err(RolloutError::GroupAborted {
                task_id: task.task_id,
                faulted: faulted.len(),
                group_size: g,
            });
        }
        if !faulted.is_empty() {
            let again = self.members(&task, &faulted.iter().map(|&i| seeds[i]).collect::<Vec<_>>()).await;
            for (&i, r) in faulted.iter().zip(again) {
                results[i] = r;
            }
        }
        let mut members = Vec::with_capacity(g);
        let (mut restarts, mut env_steps, mut still_faulted) = (0, 0, 0);
        for r in results {
            match r {
                Ok(m) => {
                    restarts += m.restarts;
                    env_steps += m.trajectory.len();
                    let success = m.trajectory.succeeded();
                    let reward = m.trajectory.reward;
                    members.push(GroupMember::new(m.trajectory, reward, success));
                }
                Err(RolloutError::EnvFault(_)) => still_faulted += 1,
                Err(e) => return Err(e),
            }
        }
        if still_faulted > 0 {
            return Err(RolloutError::GroupAborted {
                task_id: task.task_id,
                faulted: still_faulted,
                group_size: g,
            });
        }
        Ok(GroupRun {
            group: RolloutGroup {
                task_id: task.task_id,
                members,
            },
            restarts,
            resubmitted: faulted.len(),
            env_steps,
        })
    }

    /// Runs one group per task concurrently; concurrency is bounded by the
    /// pool because members queue for leases. Each group reaches the sink
    /// as soon as it completes. Results come back in task order.
    pub async fn run_batch(&self, tasks: &[String], batch_seed: u64, sink: Option<Arc<dyn TrajectorySink>>) -> Vec<Result<GroupRun, RolloutError>> {
        let mut pending: FuturesUnordered<_> = tasks
            .iter()
            .enumerate()
            .map(|(i, task_id)| {
                let me = self.clone();
                let task_id = task_id.clone();
                let seed = mix_seed(batch_seed, i as u64);
                async move {
                    let r = tokio::spawn(async move { me.run_group(&task_id, seed).await })
                        .await
                        .unwrap_or_else(|e| Err(RolloutError::EnvFault(format!("group task panicked: {e}"))));
                    (i, r)
                }
            })
            .collect();
        let mut out: Vec<Option<Result<GroupRun, RolloutError>>> = vec![None; tasks.len()];
        while let Some((i, mut r)) = pending.next().await {
            if let (Ok(run), Some(sink)) = (&r, &sink) {
                if let Err(e) = sink.accept(i, run) {
                    r = Err(RolloutError::Sink(e));
                }
            }
            out[i] = Some(r);
        }
        out.into_iter().map(|r| r.expect("every group reports")).collect()
    }
}
