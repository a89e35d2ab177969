//! The manager's single command loop. All state lives in one task; callers
//! and background I/O talk to it through messages, so every transition is
//! serialized and logged in order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender, WeakUnboundedSender};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::state::{Event, InstanceId, InstanceState, LeaseId, LoggedEvent, PoolState, StateError};
use super::{Grant, LeaseProvider, LeaseRequest, ManagerConfig, ManagerError, ManagerMetrics, PoolView, SweepReport, Transition, STANDBY_DEPLETED};
use crate::clock::SharedClock;
use crate::env_client::{Connector, EnvClient, EnvClientError};
use crate::protocol::ResetResponse;

type Reply<T> = oneshot::Sender<T>;

enum Command {
    Register { endpoint: String, reply: Reply<Result<InstanceId, ManagerError>> },
    Lease { req: LeaseRequest, reply: Reply<Result<Grant, ManagerError>> },
    Release { lease: LeaseId, reply: Reply<Result<bool, ManagerError>> },
    Sweep { reply: Reply<SweepReport> },
    Pool { reply: Reply<PoolView> },
    Metrics { reply: Reply<ManagerMetrics> },
    Events { since: u64, reply: Reply<Vec<LoggedEvent>> },
    Probed {
        endpoint: String,
        client: Arc<dyn EnvClient>,
        result: Result<(), EnvClientError>,
        reply: Reply<Result<InstanceId, ManagerError>>,
    },
    ResetDone { instance: InstanceId, result: Result<ResetResponse, EnvClientError> },
    CloseDone { instance: InstanceId, result: Result<(), EnvClientError> },
    SweepDone { results: Vec<ProbeResult>, reply: Reply<SweepReport> },
}

struct ProbeResult {
    instance: InstanceId,
    failures: u32,
    ok: bool,
}

struct Waiter {
    req: LeaseRequest,
    reply: Reply<Result<Grant, ManagerError>>,
    enqueued: Duration,
}

struct Actor {
    cfg: ManagerConfig,
    connector: Arc<dyn Connector>,
    clock: SharedClock,
    tx: WeakUnboundedSender<Command>,
    state: PoolState,
    log: Vec<LoggedEvent>,
    clients: HashMap<InstanceId, Arc<dyn EnvClient>>,
    queue: BTreeMap<Reverse<i32>, VecDeque<Waiter>>,
    /// Waiters whose reset is in flight, by instance.
    pending: HashMap<InstanceId, Waiter>,
    next_lease: LeaseId,
    metrics: ManagerMetrics,
}

impl Actor {
    fn emit(&mut self, event: Event) {
        let e = LoggedEvent {
            seq: self.state.next_seq(),
            at: self.clock.now(),
            event,
        };
        if let Err(err) = self.state.apply(&e) {
            // The loop only emits events it has just validated.
            panic!("manager emitted an invalid event: {err}");
        }
        self.log.push(e);
    }

    fn spawn(&self, fut: impl std::future::Future<Output = Command> + Send + 'static) {
        let Some(tx) = self.tx.upgrade() else { return };
        tokio::spawn(async move {
            let _ = tx.send(fut.await);
        });
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Register { endpoint, reply } => self.register(endpoint, reply),
            Command::Probed {
                endpoint,
                client,
                result,
                reply,
            } => self.registered(endpoint, client, result, reply),
            Command::Lease { req, reply } => {
                let w = Waiter {
                    req,
                    reply,
                    enqueued: self.clock.now(),
                };
                self.queue.entry(Reverse(w.req.priority)).or_default().push_back(w);
                self.pump();
            }
            Command::ResetDone { instance, result } => self.reset_done(instance, result),
            Command::Release { lease, reply } => {
                let _ = reply.send(self.release(lease, false));
            }
            Command::CloseDone { instance, result } => self.close_done(instance, result),
            Command::Sweep { reply } => self.sweep(reply),
            Command::SweepDone { results, reply } => {
                let report = self.sweep_done(results);
                let _ = reply.send(report);
            }
            Command::Pool { reply } => {
                let _ = reply.send(self.view());
            }
            Command::Metrics { reply } => {
                let mut m = self.metrics.clone();
                m.pool = self.state.counts();
                m.queue_depth = self.queue.values().map(VecDeque::len).sum();
                let _ = reply.send(m);
            }
            Command::Events { since, reply } => {
                let from = (since as usize).min(self.log.len());
                let _ = reply.send(self.log[from..].to_vec());
            }
        }
    }

    fn register(&mut self, endpoint: String, reply: Reply<Result<InstanceId, ManagerError>>) {
        if let Some(id) = self.state.by_endpoint(&endpoint) {
            let _ = reply.send(Ok(id));
            return;
        }
        let client = match self.connector.connect(&endpoint) {
            Ok(c) => c,
            Err(e) => {
                let _ = reply.send(Err(ManagerError::Unreachable(format!("{endpoint}: {e}"))));
                return;
            }
        };
        let timeout = self.cfg.sweep_period().max(Duration::from_secs(2));
        self.spawn(async move {
            let result = probe_once(client.as_ref(), timeout).await;
            Command::Probed {
                endpoint,
                client,
                result,
                reply,
            }
        });
    }

    fn registered(&mut self, endpoint: String, client: Arc<dyn EnvClient>, result: Result<(), EnvClientError>, reply: Reply<Result<InstanceId, ManagerError>>) {
        if let Some(id) = self.state.by_endpoint(&endpoint) {
            let _ = reply.send(Ok(id));
            return;
        }
        if let Err(e) = result {
            let _ = reply.send(Err(ManagerError::Unreachable(format!("{endpoint}: {e}"))));
            return;
        }
        let id = self.state.next_instance_id();
        let n = self.state.counts().total() + 1;
        let standby = self.state.counts().standby < self.cfg.floor_for(n);
        self.clients.insert(id, client);
        self.emit(Event::Registered {
            instance: id,
            endpoint,
            standby,
        });
        self.metrics.creation_count += 1;
        self.rebalance();
        let _ = reply.send(Ok(id));
        self.pump();
    }

    /// Promotes standby instances while the serving pool is below target.
    fn rebalance(&mut self) {
        let counts = self.state.counts();
        let n = counts.total();
        let target = n - self.cfg.floor_for(n);
        let mut active = counts.active();
        while active < target {
            let Some(id) = self.state.first_standby() else { break };
            self.emit(Event::Promoted { instance: id });
            self.metrics.promotions += 1;
            active += 1;
        }
    }

    fn fail(&mut self, instance: InstanceId, reason: &str) {
        let state = self.state.instance(instance).map(|r| r.state);
        if matches!(state, None | Some(InstanceState::Failed)) {
            return;
        }
        self.emit(Event::Failed {
            instance,
            reason: reason.to_string(),
        });
        self.metrics.failure_count += 1;
        log::warn!("instance {instance} failed ({reason})");
        self.rebalance();
    }

    fn pop_waiter(&mut self) -> Option<Waiter> {
        let mut first = self.queue.first_entry()?;
        let w = first.get_mut().pop_front();
        if first.get().is_empty() {
            first.remove();
        }
        w
    }

    fn requeue_front(&mut self, w: Waiter) {
        self.queue.entry(Reverse(w.req.priority)).or_default().push_front(w);
    }

    /// Starts resets for queued waiters while idle instances remain.
    fn pump(&mut self) {
        while !self.queue.is_empty() {
            let Some(instance) = self.state.next_idle() else {
                let c = self.state.counts();
                if c.active() + c.standby == 0 {
                    while let Some(w) = self.pop_waiter() {
                        let _ = w.reply.send(Err(ManagerError::PoolExhausted));
                    }
                }
                return;
            };
            let Some(w) = self.pop_waiter() else { return };
            if w.reply.is_closed() {
                continue;
            }
            self.emit(Event::ResetStarted {
                instance,
                task_id: w.req.task_id.clone(),
            });
            let client = self.clients[&instance].clone();
            let (task_id, seed) = (w.req.task_id.clone(), w.req.seed);
            self.pending.insert(instance, w);
            self.spawn(async move {
                let result = client.reset(&task_id, seed).await;
                Command::ResetDone { instance, result }
            });
        }
    }

    fn reset_done(&mut self, instance: InstanceId, result: Result<ResetResponse, EnvClientError>) {
        let Some(w) = self.pending.remove(&instance) else { return };
        let state = self.state.instance(instance).map(|r| r.state);
        if state != Some(InstanceState::Resetting) {
            // Failed by a sweep while the reset was in flight.
            self.requeue_front(w);
            self.pump();
            return;
        }
        match result {
            Ok(resp) if w.reply.is_closed() => {
                self.emit(Event::Recycled { instance });
                self.close_quietly(instance, resp.session);
            }
            Ok(resp) => {
                let now = self.clock.now();
                let lease = self.next_lease;
                self.next_lease += 1;
                let reused = self.state.instance(instance).is_some_and(|r| r.times_leased > 0);
                let deadline = now + Duration::from_secs_f64(self.cfg.lease_ttl_s);
                self.emit(Event::LeaseGranted {
                    lease,
                    instance,
                    task_id: w.req.task_id.clone(),
                    session: resp.session.clone(),
                    deadline,
                });
                self.metrics.grants += 1;
                self.metrics.reuse_count += u64::from(reused);
                self.metrics.lease_latency.observe(now.saturating_sub(w.enqueued));
                let grant = Grant {
                    lease_id: lease,
                    instance_id: instance,
                    endpoint: self.state.instance(instance).map(|r| r.endpoint.clone()).unwrap_or_default(),
                    session: resp.session,
                    observation: resp.observation,
                    granted_at: now,
                    deadline,
                };
                if w.reply.send(Ok(grant)).is_err() {
                    let _ = self.release(lease, false);
                }
            }
            Err(e) if e.is_fault() => {
                self.emit(Event::ResetFailed { instance });
                let failures = self.state.instance(instance).map_or(0, |r| r.reset_failures);
                if failures >= self.cfg.reset_failure_threshold {
                    self.fail(instance, "reset failures");
                }
                self.requeue_front(w);
            }
            Err(e) => {
                self.emit(Event::ResetRejected { instance });
                let _ = w.reply.send(Err(ManagerError::Rejected {
                    code: e.code().to_string(),
                    message: e.to_string(),
                }));
            }
        }
        self.pump();
    }

    fn close_quietly(&self, instance: InstanceId, session: String) {
        let client = self.clients[&instance].clone();
        tokio::spawn(async move {
            let _ = client.close(&session).await;
        });
    }

    fn release(&mut self, lease: LeaseId, expired: bool) -> Result<bool, ManagerError> {
        let Some(l) = self.state.lease(lease).cloned() else {
            return if lease > 0 && lease < self.next_lease {
                Ok(false)
            } else {
                Err(ManagerError::UnknownLease(lease))
            };
        };
        let instance = l.instance_id;
        if expired {
            self.emit(Event::LeaseExpired { lease, instance });
            self.metrics.expired_leases += 1;
        } else {
            self.emit(Event::LeaseReleased { lease, instance });
            self.metrics.releases += 1;
        }
        let client = self.clients[&instance].clone();
        self.spawn(async move {
            let result = client.close(&l.session).await;
            Command::CloseDone { instance, result }
        });
        Ok(true)
    }

    fn close_done(&mut self, instance: InstanceId, result: Result<(), EnvClientError>) {
        if self.state.instance(instance).map(|r| r.state) != Some(InstanceState::Resetting) {
            return;
        }
        match result {
            Err(e) if e.is_fault() => self.fail(instance, "release on a dead instance"),
            _ => self.emit(Event::Recycled { instance }),
        }
        self.pump();
    }

    fn sweep(&mut self, reply: Reply<SweepReport>) {
        let now = self.clock.now();
        let overdue: Vec<LeaseId> = self.state.leases().filter(|l| l.deadline < now).map(|l| l.lease_id).collect();
        for lease in overdue {
            let _ = self.release(lease, true);
        }
        let targets: Vec<(InstanceId, Arc<dyn EnvClient>)> = self.clients.iter().map(|(&id, c)| (id, c.clone())).collect();
        let attempts = self.cfg.probe_attempts;
        let timeout = self.cfg.sweep_period();
        self.spawn(async move {
            let probes = targets.into_iter().map(|(instance, client)| async move {
                let mut failures = 0;
                for _ in 0..attempts {
                    if probe_once(client.as_ref(), timeout).await.is_ok() {
                        return ProbeResult { instance, failures, ok: true };
                    }
                    failures += 1;
                }
                ProbeResult {
                    instance,
                    failures,
                    ok: false,
                }
            });
            Command::SweepDone {
                results: futures::future::join_all(probes).await,
                reply,
            }
        });
    }

    fn sweep_done(&mut self, results: Vec<ProbeResult>) -> SweepReport {
        let before: HashMap<InstanceId, InstanceState> = self.state.instances().map(|r| (r.id, r.state)).collect();
        let probed = results.len();
        for r in results {
            for _ in 0..r.failures {
                self.emit(Event::ProbeFailed { instance: r.instance });
            }
            if r.ok {
                self.emit(Event::ProbeOk { instance: r.instance });
            }
            let Some(rec) = self.state.instance(r.instance) else { continue };
            match rec.state {
                InstanceState::Failed if r.ok => {
                    self.emit(Event::Recovered { instance: r.instance });
                    self.metrics.recoveries += 1;
                }
                InstanceState::Failed => {}
                _ if rec.consecutive_failures >= self.cfg.probe_failure_threshold => self.fail(r.instance, "health probes"),
                _ => {}
            }
        }
        self.rebalance();
        self.metrics.sweeps += 1;
        let mut transitions: Vec<Transition> = self
            .state
            .instances()
            .filter_map(|r| {
                let from = *before.get(&r.id)?;
                (from != r.state).then_some(Transition {
                    instance: r.id,
                    from,
                    to: r.state,
                })
            })
            .collect();
        transitions.sort_by_key(|t| t.instance);
        let counts = self.state.counts();
        let mut warnings = Vec::new();
        if counts.standby == 0 && self.cfg.floor_for(counts.total()) > 0 {
            warnings.push(format!("{STANDBY_DEPLETED}: no standby instance left ({} failed)", counts.failed));
        }
        self.pump();
        SweepReport {
            at: self.clock.now(),
            probed,
            transitions,
            warnings,
        }
    }

    fn view(&self) -> PoolView {
        let counts = self.state.counts();
        PoolView {
            counts,
            standby_floor: self.cfg.floor_for(counts.total()),
            instances: self.state.instances().cloned().collect(),
            active_leases: self.state.leases().count(),
        }
    }

    async fn run(mut self, mut rx: UnboundedReceiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            self.handle(cmd);
        }
    }
}

async fn probe_once(client: &dyn EnvClient, timeout: Duration) -> Result<(), EnvClientError> {
    match tokio::time::timeout(timeout, client.health()).await {
        Ok(r) => r.map(|_| ()),
        Err(_) => Err(EnvClientError::Transport(format!("{}: health probe timed out", client.endpoint()))),
    }
}

/// Cheap, cloneable handle to a running manager.
#[derive(Debug, Clone)]
pub struct ManagerHandle {
    tx: UnboundedSender<Command>,
}

impl std::fmt::Debug for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Command")
    }
}

impl ManagerHandle {
    /// Starts an empty manager on the current tokio runtime.
    pub fn spawn(cfg: ManagerConfig, connector: Arc<dyn Connector>, clock: SharedClock) -> Self {
        Self::start(cfg, connector, clock, PoolState::default(), Vec::new(), 1)
    }

    /// Rebuilds a manager from its event log. Interrupted resets and
    /// releases are recycled; outstanding leases stay valid.
    pub fn recover(cfg: ManagerConfig, connector: Arc<dyn Connector>, clock: SharedClock, log: Vec<LoggedEvent>) -> Result<Self, StateError> {
        let state = PoolState::replay(&log)?;
        let next_lease = log
            .iter()
            .filter_map(|e| match e.event {
                Event::LeaseGranted { lease, .. } => Some(lease + 1),
                _ => None,
            })
            .max()
            .unwrap_or(1);
        Ok(Self::start(cfg, connector, clock, state, log, next_lease))
    }

    fn start(cfg: ManagerConfig, connector: Arc<dyn Connector>, clock: SharedClock, state: PoolState, log: Vec<LoggedEvent>, next_lease: LeaseId) -> Self {
        let (tx, rx) = unbounded_channel();
        let mut actor = Actor {
            cfg,
            tx: tx.downgrade(),
            clock,
            state,
            log,
            clients: HashMap::new(),
            queue: BTreeMap::new(),
            pending: HashMap::new(),
            next_lease,
            metrics: ManagerMetrics::default(),
            connector,
        };
        let records: Vec<(InstanceId, String, InstanceState)> = actor.state.instances().map(|r| (r.id, r.endpoint.clone(), r.state)).collect();
        actor.metrics.creation_count = records.len() as u64;
        for (id, endpoint, state) in records {
            match actor.connector.connect(&endpoint) {
                Ok(c) => {
                    actor.clients.insert(id, c);
                    if state == InstanceState::Resetting {
                        actor.emit(Event::Recycled { instance: id });
                    }
                }
                Err(_) => actor.fail(id, "unreachable after recovery"),
            }
        }
        tokio::spawn(actor.run(rx));
        Self { tx }
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ManagerError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| ManagerError::Stopped)?;
        rx.await.map_err(|_| ManagerError::Stopped)
    }

    pub async fn register(&self, endpoint: impl Into<String>) -> Result<InstanceId, ManagerError> {
        let endpoint = endpoint.into();
        self.call(|reply| Command::Register { endpoint, reply }).await?
    }

    pub async fn sweep(&self) -> Result<SweepReport, ManagerError> {
        self.call(|reply| Command::Sweep { reply }).await
    }

    pub async fn pool(&self) -> Result<PoolView, ManagerError> {
        self.call(|reply| Command::Pool { reply }).await
    }

    pub async fn metrics(&self) -> Result<ManagerMetrics, ManagerError> {
        self.call(|reply| Command::Metrics { reply }).await
    }

    /// Log entries with `seq >= since`.
    pub async fn events(&self, since: u64) -> Result<Vec<LoggedEvent>, ManagerError> {
        self.call(|reply| Command::Events { since, reply }).await
    }

    /// Sweeps every `period` until the manager is dropped. Reports with
    /// warnings are logged.
    pub fn spawn_sweeper(&self, period: Duration) -> JoinHandle<()> {
        let weak = self.tx.downgrade();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tick.tick().await;
                let Some(tx) = weak.upgrade() else { break };
                let handle = ManagerHandle { tx };
                match handle.sweep().await {
                    Ok(r) => {
                        for w in &r.warnings {
                            log::warn!("{w}");
                        }
                    }
                    Err(_) => break,
                }
            }
        })
    }
}

#[async_trait]
impl LeaseProvider for ManagerHandle {
    async fn lease(&self, req: LeaseRequest) -> Result<Grant, ManagerError> {
        self.call(|reply| Command::Lease { req, reply }).await?
    }

    async fn release(&self, lease: LeaseId) -> Result<bool, ManagerError> {
        self.call(|reply| Command::Release { lease, reply }).await?
    }
}
