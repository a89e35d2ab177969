//! Reward assembly and trajectory judging.
//!
//! A task's success bit comes from a deterministic rule verifier over the
//! final backend state when one is registered, otherwise from a pluggable
//! trajectory judge. The scalar reward adds an action-level repetition
//! penalty to that bit.

mod judge;
mod repetition;
mod reward;
mod rules;

use serde::{Deserialize, Serialize};

pub use judge::{
    agreement_rate, judge_prefix, salvage_prefix, CommandJudge, FnStepJudge, JudgeError, StepJudge, TrajectoryJudge,
};
pub use repetition::{detect_repetition, RepetitionConfig, RepetitionReport, RepetitionSpan, MAX_CYCLE_LENGTH};
pub use reward::{score_trajectory, trajectory_reward, RewardConfig, VerifierSet, VerifyError};
pub use rules::{Records, Rule, RuleVerifier, ANSWER_KEY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Rule,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub success: bool,
    pub source: VerdictSource,
    pub detail: String,
}

impl Verdict {
    pub fn rule(success: bool, detail: impl Into<String>) -> Self {
        Self {
            success,
            source: VerdictSource::Rule,
            detail: detail.into(),
        }
    }

    pub fn judge(success: bool, detail: impl Into<String>) -> Self {
        Self {
            success,
            source: VerdictSource::Judge,
            detail: detail.into(),
        }
    }
}
