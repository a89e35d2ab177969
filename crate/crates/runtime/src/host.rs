//! Session host: many concurrent episodes of the simulated world behind
//! opaque session tokens. Both the HTTP environment service and the
//! in-process simulated farm delegate here, so they behave identically.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use forge_core::action::Action;
use forge_core::env::{EnvError, Environment, TaskSuite, ToyEnv};
use forge_core::observation::Observation;
use forge_core::verify::Verdict;

use crate::clock::SharedClock;
use crate::protocol::{codes, HealthReport, ResetResponse, StepResponse};

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(300);

/// Error with an HTTP status and a stable code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code} ({status}): {message}")]
pub struct HostError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl HostError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unavailable() -> Self {
        Self::new(503, codes::BACKEND_UNAVAILABLE, "environment backend is down")
    }
}

impl From<EnvError> for HostError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::UnknownTask(_) => Self::new(404, codes::UNKNOWN_TASK, e.to_string()),
            EnvError::EpisodeClosed | EnvError::EpisodeFinished => Self::new(409, codes::EPISODE_FINISHED, e.to_string()),
            EnvError::UnknownVerifier(_) => Self::new(500, codes::INTERNAL, e.to_string()),
            EnvError::Backend(_) => Self::new(503, codes::BACKEND_UNAVAILABLE, e.to_string()),
        }
    }
}

#[derive(Debug)]
struct Session {
    env: ToyEnv,
    last_used: Duration,
}

#[derive(Debug)]
pub struct EnvHost {
    suite: Arc<TaskSuite>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    next_id: AtomicU64,
    prefix: String,
    clock: SharedClock,
    started: Duration,
    ttl: Duration,
    killed: AtomicBool,
}

impl EnvHost {
    pub fn new(suite: Arc<TaskSuite>, clock: SharedClock, prefix: impl Into<String>) -> Self {
        let started = clock.now();
        Self {
            suite,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            prefix: prefix.into(),
            clock,
            started,
            ttl: DEFAULT_SESSION_TTL,
            killed: AtomicBool::new(false),
        }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn suite(&self) -> &Arc<TaskSuite> {
        &self.suite
    }

    /// Simulates a crashed backend: every call fails until `revive`.
    pub fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
    }

    /// Restarts the backend with no sessions.
    pub fn revive(&self) {
        self.sessions.lock().expect("session map lock").clear();
        self.killed.store(false, Ordering::SeqCst);
    }

    pub fn is_alive(&self) -> bool {
        !self.killed.load(Ordering::SeqCst)
    }

    fn alive(&self) -> Result<(), HostError> {
        if self.is_alive() {
            Ok(())
        } else {
            Err(HostError::unavailable())
        }
    }

    fn expired(&self, s: &Session, now: Duration) -> bool {
        now.saturating_sub(s.last_used) > self.ttl
    }

    fn slot(&self, session: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, HostError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(session)
            .cloned()
            .ok_or_else(|| HostError::new(404, codes::UNKNOWN_SESSION, format!("no session `{session}`")))
    }

    /// Runs `f` on the session with per-session ordering and expiry checks.
    async fn with_session<T>(&self, session: &str, f: impl FnOnce(&mut ToyEnv) -> Result<T, HostError>) -> Result<T, HostError> {
        self.alive()?;
        let slot = self.slot(session)?;
        let mut s = slot.lock().await;
        let now = self.clock.now();
        if self.expired(&s, now) {
            drop(s);
            self.sessions.lock().expect("session map lock").remove(session);
            return Err(HostError::new(410, codes::SESSION_EXPIRED, format!("session `{session}` expired")));
        }
        s.last_used = now;
        let out = f(&mut s.env);
        self.alive()?;
        out
    }

    fn purge_expired(&self) {
        let now = self.clock.now();
        self.sessions.lock().expect("session map lock").retain(|_, slot| match slot.try_lock() {
            Ok(s) => !self.expired(&s, now),
            Err(_) => true,
        });
    }

    pub fn reset(&self, task_id: &str, seed: Option<u64>) -> Result<ResetResponse, HostError> {
        self.alive()?;
        self.purge_expired();
        let mut env = ToyEnv::new(self.suite.clone());
        let observation = env.reset(task_id, seed)?;
        let id = format!("{}-{}", self.prefix, self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Session {
            env,
            last_used: self.clock.now(),
        };
        self.sessions
            .lock()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        Ok(ResetResponse {
            session: id,
            observation,
        })
    }

    pub async fn step(&self, session: &str, action: &Action) -> Result<StepResponse, HostError> {
        self.with_session(session, |env| {
            let out = env.step(action)?;
            Ok(StepResponse {
                observation: out.observation,
                env_status: out.env_status,
                done: out.done,
            })
        })
        .await
    }

    pub async fn observation(&self, session: &str) -> Result<Observation, HostError> {
        self.with_session(session, |env| Ok(env.observation()?)).await
    }

    pub async fn evaluate(&self, session: &str) -> Result<Verdict, HostError> {
        self.with_session(session, |env| Ok(env.evaluate()?)).await
    }

    pub async fn close(&self, session: &str) -> Result<(), HostError> {
        self.with_session(session, |_| Ok(())).await?;
        self.sessions.lock().expect("session map lock").remove(session);
        Ok(())
    }

    pub fn health(&self) -> Result<HealthReport, HostError> {
        self.alive()?;
        Ok(HealthReport {
            status: "ok".into(),
            active_episodes: self.sessions.lock().expect("session map lock").len(),
            uptime_s: self.clock.now().saturating_sub(self.started).as_secs_f64(),
        })
    }
}
