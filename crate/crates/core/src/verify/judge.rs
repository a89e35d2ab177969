//! Pluggable judges: per-step correctness for prefix salvage and whole
//! trajectory verdicts for tasks without a rule verifier.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::Deserialize;
use serde_json::json;

use super::Verdict;
use crate::task::TaskSpec;
use crate::trajectory::{Step, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgeError {
    #[error("judge unavailable: {0}")]
    Unavailable(String),
    #[error("judge returned an unreadable verdict: {0}")]
    BadVerdict(String),
}

/// Judges one step given the instruction and the steps before it.
pub trait StepJudge {
    fn judge_step(&self, instruction: &str, history: &[Step], step: &Step) -> Result<bool, JudgeError>;
}

/// Judges a whole trajectory against its task objective.
pub trait TrajectoryJudge: Send + Sync {
    fn judge(&self, task: &TaskSpec, traj: &Trajectory) -> Result<Verdict, JudgeError>;
}

/// Closure-backed step judge, mostly for scripted fixtures.
pub struct FnStepJudge<F>(pub F);

impl<F> StepJudge for FnStepJudge<F>
where
    F: Fn(&str, &[Step], &Step) -> bool,
{
    fn judge_step(&self, instruction: &str, history: &[Step], step: &Step) -> Result<bool, JudgeError> {
        Ok((self.0)(instruction, history, step))
    }
}

/// Length of the longest prefix whose steps are all judged correct.
pub fn judge_prefix(instruction: &str, traj: &Trajectory, judge: &dyn StepJudge) -> Result<usize, JudgeError> {
    for (k, step) in traj.steps.iter().enumerate() {
        if !judge.judge_step(instruction, &traj.steps[..k], step)? {
            return Ok(k);
        }
    }
    Ok(traj.steps.len())
}

/// The correct prefix of a trajectory, kept for data reuse.
pub fn salvage_prefix(instruction: &str, traj: &Trajectory, judge: &dyn StepJudge) -> Result<Trajectory, JudgeError> {
    Ok(traj.prefix(judge_prefix(instruction, traj, judge)?))
}

/// Fraction of tasks on which two verdict sources agree.
pub fn agreement_rate(pairs: &[(Verdict, Verdict)]) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    pairs.iter().filter(|(a, b)| a.success == b.success).count() as f64 / pairs.len() as f64
}

/// Runs an external judge process per request: one JSON object on stdin,
/// one JSON verdict `{"success": bool, "detail": string}` on stdout.
#[derive(Debug, Clone)]
pub struct CommandJudge {
    pub program: String,
    pub args: Vec<String>,
}

#[derive(Deserialize)]
struct WireVerdict {
    success: bool,
    #[serde(default)]
    detail: String,
}

impl CommandJudge {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    fn call(&self, request: serde_json::Value) -> Result<WireVerdict, JudgeError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| JudgeError::Unavailable(format!("{}: {e}", self.program)))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            let mut line = request.to_string();
            line.push('\n');
            stdin
                .write_all(line.as_bytes())
                .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        if !out.status.success() {
            return Err(JudgeError::Unavailable(format!("judge exited with {}", out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        serde_json::from_str(text.trim()).map_err(|e| JudgeError::BadVerdict(format!("{e}: {text}")))
    }
}

impl StepJudge for CommandJudge {
    fn judge_step(&self, instruction: &str, history: &[Step], step: &Step) -> Result<bool, JudgeError> {
        let history: Vec<_> = history.iter().map(|s| json!({"index": s.index, "action": s.action})).collect();
        let req = json!({
            "kind": "step",
            "instruction": instruction,
            "history": history,
            "step": {"index": step.index, "model_output": step.model_output, "action": step.action},
        });
        Ok(self.call(req)?.success)
    }
}

impl TrajectoryJudge for CommandJudge {
    fn judge(&self, task: &TaskSpec, traj: &Trajectory) -> Result<Verdict, JudgeError> {
        let actions: Vec<_> = traj.actions().collect();
        let req = json!({
            "kind": "trajectory",
            "task_id": task.task_id,
            "instruction": task.instruction,
            "actions": actions,
        });
        let v = self.call(req)?;
        Ok(Verdict::judge(v.success, v.detail))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::trajectory::tests::step;

    fn seven_steps() -> Trajectory {
        let mut t = Trajectory::new("t", 20);
        for i in 0..7 {
            t.push(step(i, Action::click(i as u32, 0))).unwrap();
        }
        t
    }

    fn wrong_from(bad: usize) -> impl Fn(&str, &[Step], &Step) -> bool {
        move |_, _, s| s.index != bad
    }

    #[test]
    fn prefix_boundaries() {
        let t = seven_steps();
        assert_eq!(judge_prefix("", &t, &FnStepJudge(|_: &str, _: &[Step], _: &Step| true)).unwrap(), 7);
        assert_eq!(judge_prefix("", &t, &FnStepJudge(wrong_from(0))).unwrap(), 0);
        assert_eq!(judge_prefix("", &t, &FnStepJudge(wrong_from(3))).unwrap(), 3);
        let salvaged = salvage_prefix("", &t, &FnStepJudge(wrong_from(3))).unwrap();
        assert_eq!(salvaged.len(), 3);
        assert!(!salvaged.terminal);
    }

    #[test]
    fn stricter_judge_never_extends_prefix() {
        let t = seven_steps();
        for bad in 0..7 {
            let lenient = judge_prefix("", &t, &FnStepJudge(wrong_from(bad))).unwrap();
            let strict = judge_prefix(
                "",
                &t,
                &FnStepJudge(move |_: &str, _: &[Step], s: &Step| s.index != bad && s.index.is_multiple_of(2)),
            )
            .unwrap();
            assert!(strict <= lenient);
        }
    }

    #[test]
    fn agreement() {
        let yes = Verdict::rule(true, "");
        let no = Verdict::judge(false, "");
        assert_eq!(agreement_rate(&[(yes.clone(), yes.clone()), (yes, no)]), 0.5);
    }

    #[test]
    fn subprocess_judge() {
        let judge = CommandJudge::new(
            "sh",
            ["-c", r#"read line; echo '{"success": true, "detail": "looks right"}'"#],
        );
        let t = seven_steps();
        assert_eq!(judge_prefix("do it", &t, &judge).unwrap(), 7);

        let missing = CommandJudge::new("/nonexistent/judge", Vec::<String>::new());
        assert!(matches!(
            judge_prefix("x", &t, &missing),
            Err(JudgeError::Unavailable(_))
        ));
        let garbage = CommandJudge::new("sh", ["-c", "read line; echo nope"]);
        assert!(matches!(judge_prefix("x", &t, &garbage), Err(JudgeError::BadVerdict(_))));
    }
}
