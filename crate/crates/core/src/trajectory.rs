//! Steps, trajectories and the JSON-lines trajectory file format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::action::{extract_tag, serialize_action, Action};
use crate::observation::Observation;
use crate::verify::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvStatus {
    Ok,
    ActionFailed,
    EnvError,
}

/// The policy's "tokens" for one decision: prompt encoding, sampled output
/// ids and their log-probabilities under the sampling policy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenSample {
    pub prompt_ids: Vec<u32>,
    pub output_ids: Vec<u32>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    /// The full-resolution observation the action was chosen on.
    pub observation: Observation,
    pub model_output: String,
    pub action: Action,
    pub env_status: EnvStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<TokenSample>,
}

impl Step {
    pub fn thought(&self) -> &str {
        extract_tag(&self.model_output, "thinking").unwrap_or("").trim()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("step index {got} breaks contiguity (expected {expected})")]
    NonContiguous { expected: usize, got: usize },
    #[error("trajectory already ended with terminate")]
    AfterTerminate,
    #[error("trajectory already holds max_env_steps={0} steps")]
    BudgetExceeded(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub max_env_steps: usize,
    pub steps: Vec<Step>,
    /// Set once a terminate action or the step budget ended the episode.
    pub terminal: bool,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default)]
    pub policy_version: u64,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>, max_env_steps: usize) -> Self {
        assert!(max_env_steps > 0, "max_env_steps must be positive");
        Self {
            task_id: task_id.into(),
            max_env_steps,
            steps: Vec::new(),
            terminal: false,
            reward: 0.0,
            verdict: None,
            policy_version: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends a step, enforcing contiguous indices, terminate-last and the
    /// step budget. Violations are errors; nothing is repaired.
    pub fn push(&mut self, step: Step) -> Result<(), TrajectoryError> {
        if self.steps.last().is_some_and(|s| s.action.is_terminate()) {
            return Err(TrajectoryError::AfterTerminate);
        }
        if self.steps.len() >= self.max_env_steps {
            return Err(TrajectoryError::BudgetExceeded(self.max_env_steps));
        }
        if step.index != self.steps.len() {
            return Err(TrajectoryError::NonContiguous {
                expected: self.steps.len(),
                got: step.index,
            });
        }
        let ends = step.action.is_terminate();
        self.steps.push(step);
        if ends || self.steps.len() == self.max_env_steps {
            self.terminal = true;
        }
        Ok(())
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|s| &s.action)
    }

    pub fn succeeded(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.success)
    }

    /// Re-checks every structural invariant, e.g. after deserialization.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let mut fresh = Trajectory::new(self.task_id.clone(), self.max_env_steps);
        for s in &self.steps {
            fresh.push(s.clone())?;
        }
        Ok(())
    }

    /// The first `k` steps as a standalone, non-terminal trajectory.
    pub fn prefix(&self, k: usize) -> Trajectory {
        Trajectory {
            steps: self.steps[..k.min(self.steps.len())].to_vec(),
            terminal: false,
            reward: 0.0,
            verdict: None,
            ..self.clone()
        }
    }
}

/// Deterministic text rendering of the last `window` steps for prompt assembly.
///
/// Lines are keyed by absolute step index, so a growing trajectory only
/// ever appends to the rendering once the window is wider than the history.
pub fn render_history(traj: &Trajectory, window: usize) -> String {
    assert!(window >= 1, "history window must be at least 1");
    let start = traj.steps.len().saturating_sub(window);
    traj.steps[start..]
        .iter()
        .map(|s| format!("Step {}: {} => {}", s.index, s.thought(), serialize_action(&s.action)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn write_jsonl<W: Write>(mut out: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        traj.validate()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        out.push(traj);
    }
    Ok(out)
}
