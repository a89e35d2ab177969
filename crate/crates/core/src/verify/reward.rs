use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::judge::{JudgeError, TrajectoryJudge};
use super::repetition::{detect_repetition, RepetitionConfig};
use super::rules::{Records, RuleVerifier};
use super::Verdict;
use crate::action::Action;
use crate::task::TaskSpec;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    #[serde(default)]
    pub repetition: RepetitionConfig,
    /// Lower clamp on the total reward.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    -1.0
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            repetition: RepetitionConfig::default(),
            floor: default_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("unknown verifier `{0}`")]
    UnknownVerifier(String),
    #[error("rule verifier `{0}` needs the final backend state")]
    MissingState(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

/// `1{success}` plus the repetition penalty, clamped below at `cfg.floor`.
pub fn trajectory_reward<'a>(success: bool, actions: impl IntoIterator<Item = &'a Action>, cfg: &RewardConfig) -> f64 {
    let actions: Vec<Action> = actions.into_iter().cloned().collect();
    let penalty = detect_repetition(&actions, &cfg.repetition).penalty;
    (f64::from(u8::from(success)) + penalty).max(cfg.floor)
}

/// Hybrid verification: rule verifiers where registered, the judge otherwise.
#[derive(Clone, Default)]
pub struct VerifierSet {
    pub rules: BTreeMap<String, RuleVerifier>,
    pub judge: Option<Arc<dyn TrajectoryJudge>>,
}

impl VerifierSet {
    pub fn new(rules: BTreeMap<String, RuleVerifier>) -> Self {
        Self { rules, judge: None }
    }

    pub fn with_judge(mut self, judge: Arc<dyn TrajectoryJudge>) -> Self {
        self.judge = Some(judge);
        self
    }

    pub fn verdict(&self, task: &TaskSpec, traj: &Trajectory, state: Option<&Records>) -> Result<Verdict, VerifyError> {
        match (self.rules.get(&task.verifier_id), &self.judge) {
            (Some(rule), _) => state
                .map(|s| rule.check(s))
                .ok_or_else(|| VerifyError::MissingState(task.verifier_id.clone())),
            (None, Some(judge)) => Ok(judge.judge(task, traj)?),
            (None, None) => Err(VerifyError::UnknownVerifier(task.verifier_id.clone())),
        }
    }
}

/// Reward for a finished trajectory; a pure function of the trajectory,
/// the final backend state and the reward configuration.
pub fn score_trajectory(
    traj: &Trajectory,
    task: &TaskSpec,
    verifiers: &VerifierSet,
    state: Option<&Records>,
    cfg: &RewardConfig,
) -> Result<(f64, Verdict), VerifyError> {
    let verdict = verifiers.verdict(task, traj, state)?;
    Ok((trajectory_reward(verdict.success, traj.actions(), cfg), verdict))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::tests::step;
    use crate::verify::Rule;

    fn task() -> TaskSpec {
        toml::from_str(
            r#"
            task_id = "t"
            instruction = "x"
            app = "contacts"
            seed = 1
            verifier = "v"
            "#,
        )
        .unwrap()
    }

    fn traj(actions: Vec<Action>) -> Trajectory {
        let mut t = Trajectory::new("t", 50);
        for (i, a) in actions.into_iter().enumerate() {
            t.push(step(i, a)).unwrap();
        }
        t
    }

    fn verifiers() -> VerifierSet {
        let mut rules = BTreeMap::new();
        rules.insert(
            "v".to_string(),
            RuleVerifier {
                rules: vec![Rule::RecordPresent { key: "done".into() }],
            },
        );
        VerifierSet::new(rules)
    }

    #[test]
    fn success_without_repetition() {
        let mut state = Records::new();
        state.insert("done".into(), "1".into());
        let (r, v) = score_trajectory(
            &traj(vec![Action::click(1, 1)]),
            &task(),
            &verifiers(),
            Some(&state),
            &RewardConfig::default(),
        )
        .unwrap();
        assert!(v.success);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn penalty_arithmetic() {
        let cfg = RewardConfig::default();
        // one span with two redundant repeats: -0.5
        assert_eq!(trajectory_reward(false, &vec![Action::click(1, 2); 4], &cfg), -0.5);
        // one redundant repeat on success: 0.75
        assert_eq!(trajectory_reward(true, &vec![Action::click(1, 2); 3], &cfg), 0.75);
        // clamp
        assert_eq!(trajectory_reward(false, &vec![Action::Wait; 40], &cfg), -1.0);
    }

    #[test]
    fn unknown_verifier_without_judge() {
        let mut t = task();
        t.verifier_id = "nope".into();
        let err = score_trajectory(&traj(vec![]), &t, &verifiers(), None, &RewardConfig::default()).unwrap_err();
        assert_eq!(err, VerifyError::UnknownVerifier("nope".into()));
    }

    struct AlwaysYes;
    impl TrajectoryJudge for AlwaysYes {
        fn judge(&self, _: &TaskSpec, _: &Trajectory) -> Result<Verdict, JudgeError> {
            Ok(Verdict::judge(true, "scripted"))
        }
    }

    #[test]
    fn judge_fallback() {
        let mut t = task();
        t.verifier_id = "judged".into();
        let set = verifiers().with_judge(Arc::new(AlwaysYes));
        let (r, v) = score_trajectory(&traj(vec![]), &t, &set, None, &RewardConfig::default()).unwrap();
        assert_eq!(v.source, crate::verify::VerdictSource::Judge);
        assert_eq!(r, 1.0);
    }
}
