//! The RL loop: curriculum sampling, rollouts on the pool, replay
//! augmentation, group advantages and a clipped policy-gradient step.

mod config;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use forge_core::env::TaskSuite;
use forge_core::grpo::{compute_advantages, replay_augment, CurriculumState, ReplayBuffer, RolloutGroup};
use forge_core::policy::softmax::GroupBatch;
use forge_core::policy::{Decision, Policy, ToyPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ConfigError, PoolConfig, TrainConfig};

use crate::clock::SystemClock;
use crate::env_client::{AnyConnector, Connector, HttpConnector};
use crate::manager::{HttpManagerClient, LeaseProvider, ManagerError, ManagerHandle, ManagerMetrics};
use crate::policy_client::{LocalPolicy, PolicyEndpoint};
use crate::rollout::{mix_seed, BatchSink, RolloutConfig, RolloutError, RolloutWorker, TrajectorySink};
use crate::sim::SimFarm;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const POLICY_FILE: &str = "policy.json";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("pool setup failed: {0}")]
    Pool(#[from] ManagerError),
    #[error("rollout failed: {0}")]
    Rollout(#[from] RolloutError),
    #[error("update failed: {0}")]
    Update(String),
}

impl TrainError {
    pub fn is_config(&self) -> bool {
        matches!(self, TrainError::Config(_))
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub policy_version: u64,
    pub tasks: Vec<String>,
    /// Mean reward of freshly sampled trajectories.
    pub mean_reward: f64,
    pub success_rate: f64,
    pub objective: f64,
    pub clip_fraction: f64,
    pub tokens: usize,
    pub replay_injected: usize,
    /// Share of groups that received replayed members.
    pub replay_rate: f64,
    /// Share of tasks per stratum (frontier, exploration, near-mastery, exploitation).
    pub stratum_mix: [f64; 4],
    pub stratum_weights: [f64; 4],
    pub groups_aborted: usize,
    pub restarts: usize,
    pub env_steps: usize,
    pub lease_latency_ms: f64,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Completed iterations.
    pub iteration: usize,
    pub policy: ToyPolicy,
    pub curriculum: CurriculumState,
    pub replay: ReplayBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy_version: u64,
    pub temperature: f64,
    pub episodes_per_task: usize,
    pub per_task: BTreeMap<String, f64>,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub initial_eval: Option<EvalReport>,
    pub final_eval: EvalReport,
}

enum Pool {
    Sim { manager: ManagerHandle, _farm: Arc<SimFarm> },
    Remote(Arc<HttpManagerClient>),
}

impl Pool {
    async fn metrics(&self) -> Option<ManagerMetrics> {
        match self {
            Pool::Sim { manager, .. } => manager.metrics().await.ok(),
            Pool::Remote(c) => c.metrics().await.ok(),
        }
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    suite: Arc<TaskSuite>,
    policy: ToyPolicy,
    serving: Arc<LocalPolicy>,
    curriculum: CurriculumState,
    replay: ReplayBuffer,
    iteration: usize,
    pool: Pool,
    leases: Arc<dyn LeaseProvider>,
    connector: Arc<dyn Connector>,
    out_dir: Option<PathBuf>,
    sweeper: Option<tokio::task::JoinHandle<()>>,
    last_latency: (u64, f64),
}

impl Drop for Trainer {
    fn drop(&mut self) {
        if let Some(s) = self.sweeper.take() {
            s.abort();
        }
    }
}

impl Trainer {
    /// Builds the pool and a fresh policy. With `out_dir`, metrics and
    /// checkpoints are written there.
    pub async fn new(cfg: TrainConfig, out_dir: Option<PathBuf>) -> Result<Self, TrainError> {
        cfg.validate()?;
        let full = TaskSuite::load(&cfg.suite).map_err(|e| ConfigError::Invalid(format!("suite {}: {e}", cfg.suite.display())))?;
        let mut suite = if cfg.tasks.is_empty() {
            full
        } else {
            full.subset(&cfg.tasks).map_err(|e| ConfigError::Invalid(e.to_string()))?
        };
        if let Some(rate) = cfg.interrupt_rate {
            suite = suite.with_interrupt_rate(rate);
        }
        let suite = Arc::new(suite);
        let clock = SystemClock::shared();
        let (pool, leases, connector): (Pool, Arc<dyn LeaseProvider>, Arc<dyn Connector>) = match &cfg.pool.manager_url {
            Some(url) => {
                let client = Arc::new(HttpManagerClient::new(url.clone(), Duration::from_secs(600)));
                let connector = Arc::new(AnyConnector::new(vec![Arc::new(HttpConnector::default())]));
                (Pool::Remote(client.clone()), client, connector)
            }
            None => {
                let farm = Arc::new(SimFarm::new(
                    suite.clone(),
                    cfg.pool.instances,
                    Duration::from_millis(cfg.pool.latency_ms),
                    cfg.pool.fault.clone(),
                    clock.clone(),
                ));
                let manager = ManagerHandle::spawn(cfg.pool.manager.clone(), farm.clone(), clock);
                for e in farm.endpoints() {
                    manager.register(e).await?;
                }
                let leases = Arc::new(manager.clone());
                (Pool::Sim { manager, _farm: farm.clone() }, leases, farm)
            }
        };
        let sweeper = match &pool {
            Pool::Sim { manager, .. } => Some(manager.spawn_sweeper(cfg.pool.manager.sweep_period())),
            Pool::Remote(_) => None,
        };
        let policy = ToyPolicy::new(cfg.feature_dim, cfg.temperature);
        let curriculum = CurriculumState::new(cfg.curriculum.clone(), suite.task_ids());
        if let Some(dir) = &out_dir {
            fs::create_dir_all(dir)?;
        }
        Ok(Self {
            serving: Arc::new(LocalPolicy::new(Arc::new(policy.clone()))),
            cfg,
            suite,
            policy,
            curriculum,
            replay: ReplayBuffer::default(),
            iteration: 0,
            pool,
            leases,
            connector,
            out_dir,
            sweeper,
            last_latency: (0, 0.0),
        })
    }

    /// Continues from `out_dir/checkpoint.json`, dropping metrics lines
    /// written after it so iteration ids stay unique.
    pub async fn resume(cfg: TrainConfig, out_dir: PathBuf) -> Result<Self, TrainError> {
        let body = fs::read(out_dir.join(CHECKPOINT_FILE))?;
        let ckpt: Checkpoint = serde_json::from_slice(&body).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut t = Self::new(cfg, Some(out_dir.clone())).await?;
        if ckpt.policy.model.dim != t.cfg.feature_dim {
            return Err(ConfigError::Invalid("checkpoint feature_dim differs from the config".into()).into());
        }
        t.policy = ckpt.policy;
        t.policy.temperature = t.cfg.temperature;
        t.serving.replace(Arc::new(t.policy.clone()));
        t.curriculum = ckpt.curriculum;
        t.replay = ckpt.replay;
        t.iteration = ckpt.iteration;
        truncate_metrics(&out_dir.join(METRICS_FILE), ckpt.iteration)?;
        Ok(t)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.policy
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn suite(&self) -> &Arc<TaskSuite> {
        &self.suite
    }

    fn worker(&self, policy: Arc<dyn PolicyEndpoint>, rollout: RolloutConfig) -> Result<RolloutWorker, RolloutError> {
        RolloutWorker::new(self.suite.clone(), self.leases.clone(), self.connector.clone(), policy, rollout)
    }

    /// Success rate of the current policy, sampling at the eval temperature.
    pub async fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalReport, TrainError> {
        let policy: Arc<dyn Policy> = Arc::new(self.policy.with_temperature(self.cfg.eval_temperature));
        let rollout = RolloutConfig {
            group_size: episodes,
            ..self.cfg.rollout.clone()
        };
        let worker = self.worker(Arc::new(LocalPolicy::new(policy)), rollout)?;
        let tasks = self.suite.task_ids();
        let runs = worker.run_batch(&tasks, seed, None).await;
        let mut per_task = BTreeMap::new();
        for (task, run) in tasks.iter().zip(runs) {
            let run = run?;
            let wins = run.group.members.iter().filter(|m| m.success).count();
            per_task.insert(task.clone(), wins as f64 / episodes as f64);
        }
        let success_rate = per_task.values().sum::<f64>() / per_task.len().max(1) as f64;
        Ok(EvalReport {
            policy_version: self.policy.model.version,
            temperature: self.cfg.eval_temperature,
            episodes_per_task: episodes,
            per_task,
            success_rate,
        })
    }

    fn eval_seed(&self, iteration: usize) -> u64 {
        mix_seed(self.cfg.seed ^ 0x00E7_A1E7_A1E7, iteration as u64)
    }

    /// One rollout phase followed by one training phase.
    pub async fn step(&mut self) -> Result<IterationMetrics, TrainError> {
        let started = Instant::now();
        let it = self.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, it as u64));
        self.curriculum.set_progress(it as f64 / self.cfg.iterations as f64);
        let weights = self.curriculum.weights();
        let tasks = self
            .curriculum
            .sample_tasks(self.cfg.groups_per_iteration, &mut rng)
            .map_err(|e| TrainError::Update(e.to_string()))?;

        let version = self.policy.model.version;
        let worker = self.worker(self.serving.clone(), self.cfg.rollout.clone())?;
        let sink: Arc<dyn TrajectorySink> = Arc::new(BatchSink::new(Some(version)));
        let runs = worker.run_batch(&tasks, mix_seed(self.cfg.seed ^ 0xB47C, it as u64), Some(sink)).await;

        let mut groups: Vec<RolloutGroup> = Vec::new();
        let (mut aborted, mut restarts, mut env_steps) = (0, 0, 0);
        let (mut reward_sum, mut wins, mut fresh) = (0.0, 0usize, 0usize);
        for run in runs {
            match run {
                Ok(r) => {
                    restarts += r.restarts;
                    env_steps += r.env_steps;
                    for m in &r.group.members {
                        self.curriculum.record(&r.group.task_id, m.success);
                        reward_sum += m.reward;
                        wins += usize::from(m.success);
                        fresh += 1;
                    }
                    groups.push(r.group);
                }
                Err(RolloutError::GroupAborted { task_id, faulted, .. }) => {
                    log::warn!("iteration {it}: group for `{task_id}` aborted ({faulted} members faulted)");
                    aborted += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut batches = Vec::with_capacity(groups.len());
        let (mut injected, mut augmented_groups) = (0, 0);
        for mut g in groups {
            let out = replay_augment(&mut g, &mut self.replay, self.cfg.replay_replace, &mut rng);
            injected += out.injected;
            augmented_groups += usize::from(out.injected > 0);
            let adv = compute_advantages(&g.rewards(), self.cfg.advantage_eps).map_err(|e| TrainError::Update(e.to_string()))?;
            let mut decisions = Vec::with_capacity(g.members.len());
            let mut old = Vec::with_capacity(g.members.len());
            for m in &g.members {
                let samples: Vec<_> = m.trajectory.steps.iter().filter_map(|s| s.sample.as_ref()).collect();
                decisions.push(
                    samples
                        .iter()
                        .map(|s| Decision::from_sample(s).ok_or_else(|| TrainError::Update("malformed token sample".into())))
                        .collect::<Result<Vec<_>, _>>()?,
                );
                old.push(samples.iter().flat_map(|s| s.logprobs.iter().copied()).collect());
            }
            batches.push(GroupBatch {
                decisions,
                old_logprobs: old,
                advantages: adv.values,
            });
        }
        let n_groups = batches.len();
        let grad = self
            .policy
            .model
            .objective_gradient(&batches, &self.cfg.clip, self.cfg.temperature)
            .map_err(|e| TrainError::Update(e.to_string()))?;
        self.policy
            .model
            .apply_update(&grad.grad, self.cfg.learning_rate)
            .map_err(|e| TrainError::Update(e.to_string()))?;
        self.serving.replace(Arc::new(self.policy.clone()));
        self.iteration += 1;

        let lease_latency_ms = match self.pool.metrics().await {
            Some(m) => {
                let (count, sum) = (m.lease_latency.count, m.lease_latency.sum_ms);
                let (c0, s0) = std::mem::replace(&mut self.last_latency, (count, sum));
                if count > c0 {
                    (sum - s0) / (count - c0) as f64
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        let eval_success = if self.cfg.eval_every > 0 && self.iteration.is_multiple_of(self.cfg.eval_every) {
            Some(self.evaluate(self.cfg.eval_episodes, self.eval_seed(self.iteration)).await?.success_rate)
        } else {
            None
        };
        let metrics = IterationMetrics {
            iteration: it,
            policy_version: self.policy.model.version,
            tasks,
            mean_reward: if fresh == 0 { 0.0 } else { reward_sum / fresh as f64 },
            success_rate: if fresh == 0 { 0.0 } else { wins as f64 / fresh as f64 },
            objective: grad.objective,
            clip_fraction: grad.clip_fraction,
            tokens: grad.tokens,
            replay_injected: injected,
            replay_rate: if n_groups == 0 { 0.0 } else { augmented_groups as f64 / n_groups as f64 },
            stratum_mix: self.curriculum.stratum_mix(),
            stratum_weights: weights,
            groups_aborted: aborted,
            restarts,
            env_steps,
            lease_latency_ms,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            eval_success,
        };
        if let Some(dir) = &self.out_dir {
            append_metrics(&dir.join(METRICS_FILE), &metrics)?;
            if self.cfg.checkpoint_every > 0 && self.iteration.is_multiple_of(self.cfg.checkpoint_every) {
                self.save_checkpoint()?;
            }
        }
        Ok(metrics)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            policy: self.policy.clone(),
            curriculum: self.curriculum.clone(),
            replay: self.replay.clone(),
        }
    }

    /// Writes the checkpoint and the bare policy atomically.
    pub fn save_checkpoint(&self) -> Result<(), TrainError> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        write_atomic(&dir.join(CHECKPOINT_FILE), &serde_json::to_vec(&self.checkpoint()).map_err(std::io::Error::other)?)?;
        write_atomic(&dir.join(POLICY_FILE), &serde_json::to_vec(&self.policy).map_err(std::io::Error::other)?)?;
        Ok(())
    }

    /// Trains until `cfg.iterations` are complete (or `stop_at`, if
    /// earlier), evaluating before and after.
    pub async fn run(&mut self, stop_at: Option<usize>) -> Result<TrainSummary, TrainError> {
        let end = stop_at.unwrap_or(self.cfg.iterations).min(self.cfg.iterations);
        let initial_eval = if self.iteration == 0 {
            Some(self.evaluate(self.cfg.eval_episodes, self.eval_seed(0)).await?)
        } else {
            None
        };
        while self.iteration < end {
            let m = self.step().await?;
            log::info!(
                "iteration {} reward {:.3} success {:.2} clip {:.3} replay {}",
                m.iteration,
                m.mean_reward,
                m.success_rate,
                m.clip_fraction,
                m.replay_injected
            );
        }
        let final_eval = self.evaluate(self.cfg.eval_episodes, self.eval_seed(usize::MAX)).await?;
        self.save_checkpoint()?;
        Ok(TrainSummary {
            iterations: self.iteration,
            initial_eval,
            final_eval,
        })
    }
}

fn write_atomic(path: &Path, body: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body)?;
    fs::rename(tmp, path)
}

fn append_metrics(path: &Path, m: &IterationMetrics) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    serde_json::to_writer(&mut f, m)?;
    f.write_all(b"\n")
}

/// Reads a metrics file, skipping blank lines.
pub fn read_metrics(path: &Path) -> std::io::Result<Vec<IterationMetrics>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

fn truncate_metrics(path: &Path, completed: usize) -> std::io::Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<IterationMetrics> = read_metrics(path)?.into_iter().filter(|m| m.iteration < completed).collect();
    let mut w = BufWriter::new(File::create(path)?);
    for m in &kept {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
