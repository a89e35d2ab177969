//! Scripted cloud agents for the collaboration scenarios. Both read the
//! cloud-dialect history from the request, rebuild the episode state by
//! replaying it, and plan forward with the breadth-first solver.

use std::sync::Arc;

use super::memory::{parse_entry, Dialect};
use crate::action::{Action, TerminateStatus};
use crate::env::solver::{solve_from, Knowledge};
use crate::env::tools::result_value;
use crate::env::{Episode, TaskSuite};
use crate::policy::{GenerateRequest, GenerateResponse, NoteSource, Policy, PolicyError};
use crate::task::extract_slots;

/// Competent agent with access to the simulator's task definitions.
#[derive(Debug, Clone)]
pub struct PlannerPolicy {
    pub suite: Arc<TaskSuite>,
    pub max_depth: usize,
}

impl PlannerPolicy {
    pub fn new(suite: Arc<TaskSuite>) -> Self {
        Self { suite, max_depth: 10 }
    }

    fn knowledge(req: &GenerateRequest) -> Knowledge {
        let mut know = Knowledge::from_instruction(&req.instruction);
        for n in &req.notes {
            match n.source {
                NoteSource::User => know.slots.extend(extract_slots(&n.text)),
                NoteSource::Tool => {
                    if let Some(v) = serde_json::from_str(&n.text).ok().as_ref().and_then(result_value) {
                        know.tool_values.push(v.to_string());
                    }
                }
            }
        }
        know
    }

    fn next_action(&self, req: &GenerateRequest) -> Result<(String, Action), PolicyError> {
        let task = self
            .suite
            .task(&req.task_id)
            .ok_or_else(|| PolicyError::BadRequest(format!("unknown task `{}`", req.task_id)))?;
        let verifier = self
            .suite
            .verifiers
            .get(&task.verifier_id)
            .ok_or_else(|| PolicyError::BadRequest(format!("unknown verifier `{}`", task.verifier_id)))?;
        let mut ep = Episode::start(&self.suite, task, None);
        let mut know = Self::knowledge(req);
        for line in req.history.lines().filter(|l| !l.trim().is_empty()) {
            let entry = parse_entry(line, Dialect::Cloud).map_err(|e| PolicyError::BadRequest(e.to_string()))?;
            ep.apply(&entry.action, &self.suite.tools);
            know.absorb(&ep.aux);
        }
        if ep.world.pending_dialog.is_some() {
            return Ok(("dismiss the interrupting dialog".into(), Action::back()));
        }
        Ok(match solve_from(ep, know, verifier, &self.suite.tools, self.max_depth) {
            Some(plan) => match plan.actions.into_iter().next() {
                Some(a) => ("follow the recovery plan".into(), a),
                None => ("the task is complete".into(), Action::terminate_success()),
            },
            None => (
                "no recovery plan found".into(),
                Action::Terminate {
                    status: TerminateStatus::Fail,
                },
            ),
        })
    }
}

impl Policy for PlannerPolicy {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        let (thought, action) = self.next_action(req)?;
        Ok(GenerateResponse::plain(&thought, &action))
    }
}

/// Plans a recovery only when the monitor's error summary tells it what went
/// wrong; without one it trusts the history and reports completion.
#[derive(Debug, Clone)]
pub struct SummaryGuidedPolicy {
    pub planner: PlannerPolicy,
}

impl Policy for SummaryGuidedPolicy {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        match req.error_summary.as_deref() {
            Some(s) if !s.is_empty() => self.planner.generate(req),
            _ => Ok(GenerateResponse::plain(
                "history looks complete",
                &Action::terminate_success(),
            )),
        }
    }
}
