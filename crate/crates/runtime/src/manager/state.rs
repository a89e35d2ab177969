//! Event-sourced pool state. Every mutation is an `Event`; the live state is
//! the fold of the log, so replaying the log reconstructs it exactly.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub type InstanceId = u32;
pub type LeaseId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceState {
    Idle,
    Leased,
    Resetting,
    Failed,
    Standby,
}

impl InstanceState {
    /// Counts toward the serving pool.
    pub fn is_active(self) -> bool {
        matches!(self, InstanceState::Idle | InstanceState::Leased | InstanceState::Resetting)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: InstanceId,
    pub endpoint: String,
    pub state: InstanceState,
    pub last_health_ok: Option<Duration>,
    pub consecutive_failures: u32,
    pub reset_failures: u32,
    pub lease: Option<LeaseId>,
    pub times_leased: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub lease_id: LeaseId,
    pub instance_id: InstanceId,
    pub task_id: String,
    pub session: String,
    pub granted_at: Duration,
    pub deadline: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Registered { instance: InstanceId, endpoint: String, standby: bool },
    ResetStarted { instance: InstanceId, task_id: String },
    LeaseGranted { lease: LeaseId, instance: InstanceId, task_id: String, session: String, deadline: Duration },
    /// The reset hit an instance fault.
    ResetFailed { instance: InstanceId },
    /// The reset was refused for request reasons; the instance is fine.
    ResetRejected { instance: InstanceId },
    LeaseReleased { lease: LeaseId, instance: InstanceId },
    LeaseExpired { lease: LeaseId, instance: InstanceId },
    Recycled { instance: InstanceId },
    ProbeOk { instance: InstanceId },
    ProbeFailed { instance: InstanceId },
    Failed { instance: InstanceId, reason: String },
    Recovered { instance: InstanceId },
    Promoted { instance: InstanceId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    pub at: Duration,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("event {seq}: unknown instance {instance}")]
    UnknownInstance { seq: u64, instance: InstanceId },
    #[error("event {seq}: instance {instance} is {state:?}, cannot apply {event}")]
    BadTransition { seq: u64, instance: InstanceId, state: InstanceState, event: &'static str },
    #[error("event {seq}: lease {lease} is not active on instance {instance}")]
    LeaseMismatch { seq: u64, lease: LeaseId, instance: InstanceId },
    #[error("event {seq}: out of order")]
    OutOfOrder { seq: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolCounts {
    pub idle: usize,
    pub leased: usize,
    pub resetting: usize,
    pub failed: usize,
    pub standby: usize,
}

impl PoolCounts {
    pub fn active(&self) -> usize {
        self.idle + self.leased + self.resetting
    }

    pub fn total(&self) -> usize {
        self.active() + self.failed + self.standby
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolState {
    instances: BTreeMap<InstanceId, InstanceRecord>,
    leases: BTreeMap<LeaseId, Lease>,
    /// Idle instances, least recently used first.
    idle: VecDeque<InstanceId>,
    next_seq: u64,
}

impl PoolState {
    pub fn replay<'a>(log: impl IntoIterator<Item = &'a LoggedEvent>) -> Result<Self, StateError> {
        let mut s = Self::default();
        for e in log {
            s.apply(e)?;
        }
        Ok(s)
    }

    pub fn instance(&self, id: InstanceId) -> Option<&InstanceRecord> {
        self.instances.get(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &InstanceRecord> {
        self.instances.values()
    }

    pub fn lease(&self, id: LeaseId) -> Option<&Lease> {
        self.leases.get(&id)
    }

    pub fn leases(&self) -> impl Iterator<Item = &Lease> {
        self.leases.values()
    }

    pub fn by_endpoint(&self, endpoint: &str) -> Option<InstanceId> {
        self.instances.values().find(|r| r.endpoint == endpoint).map(|r| r.id)
    }

    pub fn next_idle(&self) -> Option<InstanceId> {
        self.idle.front().copied()
    }

    pub fn first_standby(&self) -> Option<InstanceId> {
        self.instances.values().find(|r| r.state == InstanceState::Standby).map(|r| r.id)
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn next_instance_id(&self) -> InstanceId {
        self.instances.keys().next_back().map_or(0, |k| k + 1)
    }

    pub fn counts(&self) -> PoolCounts {
        let mut c = PoolCounts::default();
        for r in self.instances.values() {
            match r.state {
                InstanceState::Idle => c.idle += 1,
                InstanceState::Leased => c.leased += 1,
                InstanceState::Resetting => c.resetting += 1,
                InstanceState::Failed => c.failed += 1,
                InstanceState::Standby => c.standby += 1,
            }
        }
        c
    }

    fn rec(&mut self, seq: u64, id: InstanceId) -> Result<&mut InstanceRecord, StateError> {
        self.instances
            .get_mut(&id)
            .ok_or(StateError::UnknownInstance { seq, instance: id })
    }

    fn expect(&mut self, seq: u64, id: InstanceId, allowed: &[InstanceState], event: &'static str) -> Result<&mut InstanceRecord, StateError> {
        let r = self.rec(seq, id)?;
        if !allowed.contains(&r.state) {
            return Err(StateError::BadTransition {
                seq,
                instance: id,
                state: r.state,
                event,
            });
        }
        Ok(r)
    }

    fn set_state(&mut self, id: InstanceId, to: InstanceState) {
        let r = self.instances.get_mut(&id).expect("checked by caller");
        let from = r.state;
        r.state = to;
        if from == InstanceState::Idle && to != InstanceState::Idle {
            self.idle.retain(|&i| i != id);
        }
        if to == InstanceState::Idle && from != InstanceState::Idle {
            self.idle.push_back(id);
        }
    }

    fn end_lease(&mut self, seq: u64, lease: LeaseId, instance: InstanceId) -> Result<(), StateError> {
        match self.leases.get(&lease) {
            Some(l) if l.instance_id == instance => {}
            _ => return Err(StateError::LeaseMismatch { seq, lease, instance }),
        }
        self.leases.remove(&lease);
        self.rec(seq, instance)?.lease = None;
        Ok(())
    }

    pub fn apply(&mut self, e: &LoggedEvent) -> Result<(), StateError> {
        use InstanceState::*;
        let seq = e.seq;
        if seq != self.next_seq {
            return Err(StateError::OutOfOrder { seq });
        }
        match &e.event {
            Event::Registered { instance, endpoint, standby } => {
                self.instances.insert(
                    *instance,
                    InstanceRecord {
                        id: *instance,
                        endpoint: endpoint.clone(),
                        state: Failed,
                        last_health_ok: Some(e.at),
                        consecutive_failures: 0,
                        reset_failures: 0,
                        lease: None,
                        times_leased: 0,
                    },
                );
                self.set_state(*instance, if *standby { Standby } else { Idle });
            }
            Event::ResetStarted { instance, .. } => {
                self.expect(seq, *instance, &[Idle], "reset_started")?;
                self.set_state(*instance, Resetting);
            }
            Event::LeaseGranted {
                lease,
                instance,
                task_id,
                session,
                deadline,
            } => {
                let r = self.expect(seq, *instance, &[Resetting], "lease_granted")?;
                if r.lease.is_some() {
                    return Err(StateError::LeaseMismatch {
                        seq,
                        lease: *lease,
                        instance: *instance,
                    });
                }
                r.lease = Some(*lease);
                r.times_leased += 1;
                r.reset_failures = 0;
                self.leases.insert(
                    *lease,
                    Lease {
                        lease_id: *lease,
                        instance_id: *instance,
                        task_id: task_id.clone(),
                        session: session.clone(),
                        granted_at: e.at,
                        deadline: *deadline,
                    },
                );
                self.set_state(*instance, Leased);
            }
            Event::ResetFailed { instance } => {
                self.expect(seq, *instance, &[Resetting], "reset_failed")?.reset_failures += 1;
                self.set_state(*instance, Idle);
            }
            Event::ResetRejected { instance } => {
                self.expect(seq, *instance, &[Resetting], "reset_rejected")?;
                self.set_state(*instance, Idle);
            }
            Event::LeaseReleased { lease, instance } | Event::LeaseExpired { lease, instance } => {
                self.expect(seq, *instance, &[Leased], "lease_released")?;
                self.end_lease(seq, *lease, *instance)?;
                self.set_state(*instance, Resetting);
            }
            Event::Recycled { instance } => {
                self.expect(seq, *instance, &[Resetting], "recycled")?;
                self.set_state(*instance, Idle);
            }
            Event::ProbeOk { instance } => {
                let r = self.rec(seq, *instance)?;
                r.consecutive_failures = 0;
                r.last_health_ok = Some(e.at);
            }
            Event::ProbeFailed { instance } => {
                self.rec(seq, *instance)?.consecutive_failures += 1;
            }
            Event::Failed { instance, .. } => {
                let r = self.expect(seq, *instance, &[Idle, Leased, Resetting, Standby], "failed")?;
                if let Some(lease) = r.lease {
                    self.end_lease(seq, lease, *instance)?;
                }
                self.set_state(*instance, Failed);
            }
            Event::Recovered { instance } => {
                let r = self.expect(seq, *instance, &[Failed], "recovered")?;
                r.consecutive_failures = 0;
                r.reset_failures = 0;
                r.last_health_ok = Some(e.at);
                self.set_state(*instance, Standby);
            }
            Event::Promoted { instance } => {
                self.expect(seq, *instance, &[Standby], "promoted")?;
                self.set_state(*instance, Idle);
            }
        }
        self.next_seq += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub events: usize,
    pub grants: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Independent safety check over a log: no instance ever holds two leases,
/// failed instances are never granted, lease ids are never reused.
///
/// Deliberately shares no code with `PoolState::apply`.
pub fn audit(log: &[LoggedEvent]) -> AuditReport {
    let mut report = AuditReport {
        events: log.len(),
        ..AuditReport::default()
    };
    let mut holder: HashMap<InstanceId, LeaseId> = HashMap::new();
    let mut failed: HashSet<InstanceId> = HashSet::new();
    let mut seen: HashSet<LeaseId> = HashSet::new();
    for e in log {
        match &e.event {
            Event::LeaseGranted { lease, instance, .. } => {
                report.grants += 1;
                if !seen.insert(*lease) {
                    report.violations.push(format!("seq {}: lease id {lease} reused", e.seq));
                }
                if let Some(other) = holder.insert(*instance, *lease) {
                    report
                        .violations
                        .push(format!("seq {}: instance {instance} granted lease {lease} while holding {other}", e.seq));
                }
                if failed.contains(instance) {
                    report.violations.push(format!("seq {}: failed instance {instance} granted lease {lease}", e.seq));
                }
            }
            Event::LeaseReleased { lease, instance } | Event::LeaseExpired { lease, instance } => {
                if holder.get(instance) != Some(lease) {
                    report
                        .violations
                        .push(format!("seq {}: release of lease {lease} not held by instance {instance}", e.seq));
                }
                holder.remove(instance);
            }
            Event::Failed { instance, .. } => {
                holder.remove(instance);
                failed.insert(*instance);
            }
            Event::Recovered { instance } => {
                failed.remove(instance);
            }
            _ => {}
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(events: Vec<Event>) -> Vec<LoggedEvent> {
        events
            .into_iter()
            .enumerate()
            .map(|(i, event)| LoggedEvent {
                seq: i as u64,
                at: Duration::from_millis(i as u64),
                event,
            })
            .collect()
    }

    fn grant(lease: LeaseId, instance: InstanceId) -> Event {
        Event::LeaseGranted {
            lease,
            instance,
            task_id: "t".into(),
            session: "s".into(),
            deadline: Duration::from_secs(60),
        }
    }

    fn reg(instance: InstanceId, standby: bool) -> Event {
        Event::Registered {
            instance,
            endpoint: format!("sim://{instance}"),
            standby,
        }
    }

    #[test]
    fn lifecycle_replays() {
        let events = log(vec![
            reg(0, false),
            reg(1, true),
            Event::ResetStarted { instance: 0, task_id: "t".into() },
            grant(1, 0),
            Event::LeaseReleased { lease: 1, instance: 0 },
            Event::Recycled { instance: 0 },
            Event::Failed { instance: 0, reason: "probe".into() },
            Event::Promoted { instance: 1 },
        ]);
        let s = PoolState::replay(&events).unwrap();
        let c = s.counts();
        assert_eq!((c.idle, c.failed, c.standby), (1, 1, 0));
        assert_eq!(s.next_idle(), Some(1));
        assert_eq!(s.instance(0).unwrap().times_leased, 1);
        assert!(audit(&events).clean());
    }

    #[test]
    fn invalid_transitions_are_rejected() {
        let events = log(vec![reg(0, false), grant(1, 0)]);
        assert!(matches!(PoolState::replay(&events), Err(StateError::BadTransition { .. })));
        let events = log(vec![reg(0, true), Event::ResetStarted { instance: 0, task_id: "t".into() }]);
        assert!(PoolState::replay(&events).is_err());
    }

    #[test]
    fn failure_revokes_the_lease() {
        let events = log(vec![
            reg(0, false),
            Event::ResetStarted { instance: 0, task_id: "t".into() },
            grant(7, 0),
            Event::Failed { instance: 0, reason: "reset".into() },
        ]);
        let s = PoolState::replay(&events).unwrap();
        assert!(s.lease(7).is_none());
        assert_eq!(s.instance(0).unwrap().lease, None);
    }

    #[test]
    fn audit_flags_double_grants_and_failed_grants() {
        let events = log(vec![grant(1, 0), grant(2, 0)]);
        assert_eq!(audit(&events).violations.len(), 1);
        let events = log(vec![Event::Failed { instance: 3, reason: "x".into() }, grant(1, 3)]);
        assert_eq!(audit(&events).violations.len(), 1);
        let events = log(vec![grant(1, 0), Event::LeaseReleased { lease: 1, instance: 0 }, grant(1, 1)]);
        assert_eq!(audit(&events).violations.len(), 1);
    }

    #[test]
    fn logged_events_round_trip_json() {
        let e = &log(vec![grant(4, 2)])[0];
        let text = serde_json::to_string(e).unwrap();
        assert!(text.contains("\"type\":\"lease_granted\""));
        assert_eq!(&serde_json::from_str::<LoggedEvent>(&text).unwrap(), e);
    }
}
