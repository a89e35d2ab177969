//! In-process farm of simulated environment instances (`sim://<i>`) with
//! injectable latency, per-lease crash faults and supervised restarts.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use forge_core::action::Action;
use forge_core::env::TaskSuite;
use forge_core::observation::Observation;
use forge_core::verify::Verdict;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::SharedClock;
use crate::env_client::{Connector, EnvClient, EnvClientError};
use crate::host::EnvHost;
use crate::protocol::{HealthReport, ResetResponse, StepResponse};

pub const SIM_SCHEME: &str = "sim://";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    /// Probability that an instance crashes during a given lease.
    #[serde(default)]
    pub fail_prob: f64,
    /// A doomed instance dies after `1..=max_steps_before_crash` steps.
    #[serde(default = "default_crash_steps")]
    pub max_steps_before_crash: u32,
    /// Supervisor restart delay; `None` leaves crashed instances down.
    #[serde(default, with = "opt_millis")]
    pub restart_after: Option<Duration>,
    #[serde(default)]
    pub seed: u64,
}

fn default_crash_steps() -> u32 {
    4
}

mod opt_millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_some(&(d.as_millis() as u64)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_millis))
    }
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self {
            fail_prob: 0.0,
            max_steps_before_crash: default_crash_steps(),
            restart_after: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub endpoint: String,
    pub at: Duration,
}

#[derive(Debug)]
struct FarmShared {
    clock: SharedClock,
    fault: FaultConfig,
    crashes: Mutex<Vec<CrashRecord>>,
}

#[derive(Debug)]
pub struct SimInstance {
    endpoint: String,
    host: EnvHost,
    latency: Duration,
    shared: Arc<FarmShared>,
    /// Steps left before an injected crash.
    doom: Mutex<Option<u32>>,
    rng: Mutex<ChaCha8Rng>,
}

impl SimInstance {
    pub fn host(&self) -> &EnvHost {
        &self.host
    }

    async fn delay(&self) {
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
    }

    fn check_alive(&self) -> Result<(), EnvClientError> {
        if self.host.is_alive() {
            Ok(())
        } else {
            Err(EnvClientError::Transport(format!("{}: connection refused", self.endpoint)))
        }
    }

    /// Crashes the instance now; the supervisor restarts it if configured.
    pub fn crash(self: &Arc<Self>) {
        if !self.host.is_alive() {
            return;
        }
        self.host.kill();
        *self.doom.lock().expect("doom lock") = None;
        self.shared.crashes.lock().expect("crash log lock").push(CrashRecord {
            endpoint: self.endpoint.clone(),
            at: self.shared.clock.now(),
        });
        if let Some(delay) = self.shared.fault.restart_after {
            let me = self.clone();
            tokio::spawn(async move {
                tokio::time::sleep(delay).await;
                me.host.revive();
            });
        }
    }
}

/// Client view of one instance; crash bookkeeping needs the `Arc`.
#[derive(Debug, Clone)]
struct SimClient(Arc<SimInstance>);

#[async_trait]
impl EnvClient for SimClient {
    fn endpoint(&self) -> &str {
        &self.0.endpoint
    }

    async fn reset(&self, task_id: &str, seed: Option<u64>) -> Result<ResetResponse, EnvClientError> {
        self.0.delay().await;
        self.0.check_alive()?;
        let out = self.0.host.reset(task_id, seed)?;
        // Each reset starts a new lease; its fault is drawn afresh.
        let f = &self.0.shared.fault;
        let mut doom = None;
        if f.fail_prob > 0.0 {
            let mut rng = self.0.rng.lock().expect("rng lock");
            if rng.random_bool(f.fail_prob.min(1.0)) {
                doom = Some(rng.random_range(1..=f.max_steps_before_crash.max(1)));
            }
        }
        *self.0.doom.lock().expect("doom lock") = doom;
        Ok(out)
    }

    async fn step(&self, session: &str, action: &Action) -> Result<StepResponse, EnvClientError> {
        self.0.delay().await;
        self.0.check_alive()?;
        let crash = {
            let mut doom = self.0.doom.lock().expect("doom lock");
            match doom.as_mut() {
                Some(n) if *n <= 1 => true,
                Some(n) => {
                    *n -= 1;
                    false
                }
                None => false,
            }
        };
        if crash {
            self.0.crash();
            self.0.check_alive()?;
        }
        Ok(self.0.host.step(session, action).await?)
    }

    async fn observation(&self, session: &str) -> Result<Observation, EnvClientError> {
        self.0.delay().await;
        self.0.check_alive()?;
        Ok(self.0.host.observation(session).await?)
    }

    async fn evaluate(&self, session: &str) -> Result<Verdict, EnvClientError> {
        self.0.delay().await;
        self.0.check_alive()?;
        Ok(self.0.host.evaluate(session).await?)
    }

    async fn close(&self, session: &str) -> Result<(), EnvClientError> {
        self.0.check_alive()?;
        Ok(self.0.host.close(session).await?)
    }

    async fn health(&self) -> Result<HealthReport, EnvClientError> {
        self.0.check_alive()?;
        Ok(self.0.host.health()?)
    }
}

#[derive(Debug, Clone)]
pub struct SimFarm {
    instances: Vec<Arc<SimInstance>>,
    shared: Arc<FarmShared>,
}

impl SimFarm {
    pub fn new(suite: Arc<TaskSuite>, count: usize, latency: Duration, fault: FaultConfig, clock: SharedClock) -> Self {
        let shared = Arc::new(FarmShared {
            clock: clock.clone(),
            fault: fault.clone(),
            crashes: Mutex::new(Vec::new()),
        });
        let instances = (0..count)
            .map(|i| {
                let endpoint = format!("{SIM_SCHEME}{i}");
                Arc::new(SimInstance {
                    host: EnvHost::new(suite.clone(), clock.clone(), format!("sim{i}")),
                    endpoint,
                    latency,
                    shared: shared.clone(),
                    doom: Mutex::new(None),
                    rng: Mutex::new(ChaCha8Rng::seed_from_u64(fault.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))),
                })
            })
            .collect();
        Self { instances, shared }
    }

    pub fn endpoints(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.endpoint.clone()).collect()
    }

    pub fn instance(&self, i: usize) -> &Arc<SimInstance> {
        &self.instances[i]
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Every crash so far, injected or manual.
    pub fn crashes(&self) -> Vec<CrashRecord> {
        self.shared.crashes.lock().expect("crash log lock").clone()
    }
}

impl Connector for SimFarm {
    fn connect(&self, endpoint: &str) -> Result<Arc<dyn EnvClient>, EnvClientError> {
        endpoint
            .strip_prefix(SIM_SCHEME)
            .and_then(|i| i.parse::<usize>().ok())
            .and_then(|i| self.instances.get(i))
            .map(|inst| Arc::new(SimClient(inst.clone())) as Arc<dyn EnvClient>)
            .ok_or_else(|| EnvClientError::Transport(format!("unknown simulated endpoint `{endpoint}`")))
    }
}
