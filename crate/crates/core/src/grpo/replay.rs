//! Per-task buffer of recent successful rollouts, used to refill groups in
//! which every member failed.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GroupMember, RolloutGroup};

pub const REPLAY_CAPACITY: usize = 8;
pub const DEFAULT_REPLACE_COUNT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    /// Most recent first.
    per_task: BTreeMap<String, VecDeque<GroupMember>>,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(REPLAY_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            per_task: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts a successful member; failures are refused and `false` returned.
    pub fn insert(&mut self, task_id: &str, member: GroupMember) -> bool {
        if !member.success {
            return false;
        }
        let entry = self.per_task.entry(task_id.to_string()).or_default();
        entry.push_front(GroupMember {
            replay_augmented: false,
            ..member
        });
        entry.truncate(self.capacity);
        true
    }

    pub fn len(&self, task_id: &str) -> usize {
        self.per_task.get(task_id).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.per_task.values().all(VecDeque::is_empty)
    }

    /// Entries for a task, most recent first.
    pub fn entries(&self, task_id: &str) -> impl Iterator<Item = &GroupMember> {
        self.per_task.get(task_id).into_iter().flatten()
    }

    pub fn total_len(&self) -> usize {
        self.per_task.values().map(VecDeque::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub inserted: usize,
    pub injected: usize,
}

/// Adds fresh successes to the buffer; if the group has none, replaces up to
/// `replace_count` randomly chosen members with distinct buffered successes
/// for the same task.
pub fn replay_augment<R: Rng + ?Sized>(
    group: &mut RolloutGroup,
    buffer: &mut ReplayBuffer,
    replace_count: usize,
    rng: &mut R,
) -> ReplayOutcome {
    let mut outcome = ReplayOutcome::default();
    if group.any_success() {
        for m in group.members.iter().filter(|m| m.success && !m.replay_augmented) {
            outcome.inserted += usize::from(buffer.insert(&group.task_id, m.clone()));
        }
        return outcome;
    }
    let available = buffer.len(&group.task_id);
    let k = replace_count.min(available).min(group.members.len());
    if k == 0 {
        return outcome;
    }
    let slots = sample(rng, group.members.len(), k);
    let picks = sample(rng, available, k);
    let stored: Vec<GroupMember> = buffer.entries(&group.task_id).cloned().collect();
    for (slot, pick) in slots.iter().zip(picks.iter()) {
        group.members[slot] = GroupMember {
            replay_augmented: true,
            ..stored[pick].clone()
        };
    }
    outcome.injected = k;
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Trajectory;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn member(tag: usize, success: bool) -> GroupMember {
        let mut t = Trajectory::new(format!("traj-{tag}"), 5);
        t.policy_version = tag as u64;
        GroupMember::new(t, f64::from(u8::from(success)), success)
    }

    #[test]
    fn group_with_success_is_unchanged_and_fills_buffer() {
        let mut buf = ReplayBuffer::default();
        let mut g = RolloutGroup {
            task_id: "a".into(),
            members: vec![member(0, true), member(1, false)],
        };
        let before = g.clone();
        let out = replay_augment(&mut g, &mut buf, 2, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(g, before);
        assert_eq!(out.inserted, 1);
        assert_eq!(buf.len("a"), 1);
    }

    #[test]
    fn all_fail_group_gets_two_replacements() {
        let mut buf = ReplayBuffer::default();
        for i in 0..3 {
            buf.insert("a", member(100 + i, true));
        }
        let mut g = RolloutGroup {
            task_id: "a".into(),
            members: (0..4).map(|i| member(i, false)).collect(),
        };
        let out = replay_augment(&mut g, &mut buf, 2, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(out.injected, 2);
        assert_eq!(g.members.iter().filter(|m| m.replay_augmented).count(), 2);
        assert!(g.members.iter().filter(|m| m.replay_augmented).all(|m| m.success));
        assert_eq!(buf.len("a"), 3);
    }

    #[test]
    fn empty_buffer_passes_through() {
        let mut buf = ReplayBuffer::default();
        let mut g = RolloutGroup {
            task_id: "a".into(),
            members: (0..4).map(|i| member(i, false)).collect(),
        };
        let before = g.clone();
        replay_augment(&mut g, &mut buf, 2, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(g, before);
    }

    #[test]
    fn ninth_success_evicts_oldest() {
        let mut buf = ReplayBuffer::default();
        for i in 0..9 {
            assert!(buf.insert("a", member(i, true)));
        }
        assert_eq!(buf.len("a"), 8);
        let versions: Vec<u64> = buf.entries("a").map(|m| m.trajectory.policy_version).collect();
        assert_eq!(versions, (1..9).rev().collect::<Vec<u64>>());
        assert!(!buf.insert("a", member(99, false)));
    }
}
