//! Group-relative policy optimization: advantages, the clipped token-level
//! objective, success replay and the pass@K curriculum.

pub mod advantages;
pub mod curriculum;
pub mod objective;
pub mod replay;

use serde::{Deserialize, Serialize};

use crate::trajectory::Trajectory;

pub use advantages::{compute_advantages, AdvantageSet, DEFAULT_STD_EPS};
pub use curriculum::{CurriculumConfig, CurriculumState, Stratum};
pub use objective::{grpo_objective, ClipConfig, ObjectiveOutput};
pub use replay::{replay_augment, ReplayBuffer, ReplayOutcome, REPLAY_CAPACITY};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group of size {0} is too small for advantage normalization")]
    GroupTooSmall(usize),
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid clip configuration: {0}")]
    InvalidClip(String),
    #[error("no tasks to sample from")]
    EmptyTaskSet,
}

/// One rollout in a group, together with its scalar reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub trajectory: Trajectory,
    pub reward: f64,
    pub success: bool,
    #[serde(default)]
    pub replay_augmented: bool,
}

impl GroupMember {
    pub fn new(trajectory: Trajectory, reward: f64, success: bool) -> Self {
        Self {
            trajectory,
            reward,
            success,
            replay_augmented: false,
        }
    }

    /// Old-policy log-probabilities of every token, in step order.
    pub fn old_logprobs(&self) -> Vec<f64> {
        self.trajectory
            .steps
            .iter()
            .filter_map(|s| s.sample.as_ref())
            .flat_map(|s| s.logprobs.iter().copied())
            .collect()
    }
}

/// The `G` rollouts sampled for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task_id: String,
    pub members: Vec<GroupMember>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.reward).collect()
    }

    pub fn any_success(&self) -> bool {
        self.members.iter().any(|m| m.success)
    }

    pub fn old_logprobs(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(GroupMember::old_logprobs).collect()
    }
}
