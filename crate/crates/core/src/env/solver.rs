//! Breadth-first solver over cloned world states. Used to prove every
//! shipped task is solvable and as the planner behind scripted agents.

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde_json::Value;

use super::tools::{result_value, ToolRegistry};
use super::world::{Effect, ScreenId};
use super::{Environment, Episode, TaskSuite, ToyEnv, AUX_MCP_RESULT, AUX_USER_REPLY};
use crate::action::{Action, SwipeDirection};
use crate::task::{extract_slots, TaskSpec};
use crate::trajectory::EnvStatus;
use crate::verify::{RuleVerifier, Verdict};

/// What an agent can legitimately know: instruction slots, user replies
/// and tool results. Never the hidden context itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, serde::Serialize)]
pub struct Knowledge {
    pub slots: BTreeMap<String, String>,
    pub tool_values: Vec<String>,
}

impl Knowledge {
    pub fn from_instruction(instruction: &str) -> Self {
        Self {
            slots: extract_slots(instruction),
            tool_values: Vec::new(),
        }
    }

    pub fn absorb(&mut self, aux: &BTreeMap<String, Value>) {
        if let Some(reply) = aux.get(AUX_USER_REPLY).and_then(Value::as_str) {
            self.slots.extend(extract_slots(reply));
        }
        if let Some(v) = aux.get(AUX_MCP_RESULT).and_then(result_value) {
            if !self.tool_values.iter().any(|t| t == v) {
                self.tool_values.push(v.to_string());
            }
        }
    }
}

/// Every action worth trying from the current episode state.
pub fn candidate_actions(ep: &Episode, know: &Knowledge, tools: &ToolRegistry) -> Vec<Action> {
    let mut out = Vec::new();
    let widgets = if ep.world.pending_dialog.is_some() {
        ep.world.dialog_widgets()
    } else {
        ep.world.widgets()
    };
    for w in widgets.iter().filter(|w| w.effect != Effect::Inert) {
        let c = w.view.bbox.center();
        out.push(Action::click(c.x, c.y));
    }
    out.push(Action::back());
    if ep.world.screen() == ScreenId::FilesBrowser {
        for direction in [SwipeDirection::Up, SwipeDirection::Down] {
            out.push(Action::Swipe { direction, point: None });
        }
    }
    if let Some(field) = &ep.world.frame().focus {
        for v in know.slots.values() {
            out.push(Action::type_text(v.clone()));
        }
        if ep.task.hidden_context.is_some() && !know.slots.contains_key(field) {
            out.push(Action::AskUser {
                text: format!("What is the {field}?"),
            });
        }
    }
    for tool in &ep.task.tools {
        if let Some(args) = tool_args(tools, tool, know) {
            out.push(Action::McpCall {
                tool: tool.clone(),
                args,
            });
        }
    }
    for v in &know.tool_values {
        out.push(Action::Answer { text: v.clone() });
    }
    out
}

/// Arguments for `tool` filled from known slots; `None` if any is unknown.
pub fn tool_args(tools: &ToolRegistry, tool: &str, know: &Knowledge) -> Option<BTreeMap<String, Value>> {
    tools
        .get(tool)?
        .params
        .iter()
        .map(|p| know.slots.get(p).map(|v| (p.clone(), Value::from(v.clone()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub actions: Vec<Action>,
    pub states_explored: usize,
}

/// Shortest action sequence (ignoring interrupts) that satisfies the task's
/// verifier, searched up to `max_depth` actions.
pub fn solve(suite: &TaskSuite, task: &TaskSpec, max_depth: usize) -> Option<Solution> {
    let verifier = suite.verifiers.get(&task.verifier_id)?;
    let start = Episode::start(suite, suite.task(&task.task_id).unwrap_or(task), None);
    let know = Knowledge::from_instruction(&task.instruction);
    solve_from(start, know, verifier, &suite.tools, max_depth)
}

/// Breadth-first search from an arbitrary episode state. Interrupts are
/// switched off for the search and any pending dialog is kept.
pub fn solve_from(
    mut start: Episode,
    know: Knowledge,
    verifier: &RuleVerifier,
    tools: &ToolRegistry,
    max_depth: usize,
) -> Option<Solution> {
    start.world.interrupt_rate = 0.0;
    start.aux.clear();
    let key = |ep: &Episode, k: &Knowledge| {
        let mut w = ep.world.clone();
        w.tick = 0;
        serde_json::to_string(&(w, k)).expect("state serializes")
    };
    let mut seen = HashSet::new();
    seen.insert(key(&start, &know));
    let mut queue = VecDeque::from([(start, know, Vec::<Action>::new())]);
    let mut explored = 0;
    while let Some((ep, know, path)) = queue.pop_front() {
        explored += 1;
        if verifier.check(ep.records()).success {
            return Some(Solution {
                actions: path,
                states_explored: explored,
            });
        }
        if path.len() >= max_depth {
            continue;
        }
        for action in candidate_actions(&ep, &know, tools) {
            let mut next = ep.clone();
            if next.apply(&action, tools) != EnvStatus::Ok {
                continue;
            }
            let mut k2 = know.clone();
            k2.absorb(&next.aux);
            next.aux.clear();
            if seen.insert(key(&next, &k2)) {
                let mut p = path.clone();
                p.push(action);
                queue.push_back((next, k2, p));
            }
        }
    }
    None
}

/// Runs a plan on a live environment, dismissing any interrupt dialog with
/// `back` before each planned action. Returns every executed action and the
/// final verdict.
pub fn execute_plan(env: &mut ToyEnv, task_id: &str, plan: &[Action]) -> Result<(Vec<Action>, Verdict), super::EnvError> {
    let mut obs = env.reset(task_id, None)?;
    let mut executed = Vec::new();
    for action in plan {
        while obs.has_dialog() {
            obs = env.step(&Action::back())?.observation;
            executed.push(Action::back());
        }
        obs = env.step(action)?.observation;
        executed.push(action.clone());
    }
    Ok((executed, env.evaluate()?))
}
