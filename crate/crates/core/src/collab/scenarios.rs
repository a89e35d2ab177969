//! Scripted device-cloud scenarios over the shipped task suite. Each one
//! pairs a local script (plan prefixes with injected mistakes) with a cloud
//! agent and states what the router must do.

use std::sync::Arc;

use serde::Serialize;

use super::agents::{PlannerPolicy, SummaryGuidedPolicy};
use super::{run_collaborative, CollabConfig, CollabOutcome, Executor, MonitorConfig};
use crate::action::Action;
use crate::env::solver::solve;
use crate::env::{TaskSuite, ToyEnv};
use crate::policy::{GenerateRequest, GenerateResponse, Policy, PolicyError, ScriptedPolicy};

/// A title tap: accepted by the world but changes nothing.
const INERT_TAP: Action = Action::Click {
    point: crate::action::Point::new(540, 130),
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CloudKind {
    Absent,
    Planner,
    SummaryGuided,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Expectation {
    pub switched: bool,
    pub success: bool,
    pub privacy_blocked: bool,
    /// Number of local steps before the handoff, when one is expected.
    pub switch_step: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub task_id: &'static str,
    pub local: ScriptedPolicy,
    pub cloud: CloudKind,
    pub config: CollabConfig,
    pub expect: Expectation,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub name: &'static str,
    pub outcome: CollabOutcome,
    /// Human-readable violations; empty when the scenario behaved.
    pub failures: Vec<String>,
}

/// Always fails, standing in for an unreachable cloud endpoint.
#[derive(Debug, Clone, Copy)]
pub struct UnreachablePolicy;

impl Policy for UnreachablePolicy {
    fn generate(&self, _req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        Err(PolicyError::Unavailable("connection refused".into()))
    }
}

fn plan(suite: &TaskSuite, task_id: &str) -> Vec<Action> {
    let task = suite.task(task_id).unwrap_or_else(|| panic!("suite lacks `{task_id}`"));
    solve(suite, task, 12)
        .unwrap_or_else(|| panic!("`{task_id}` is unsolvable"))
        .actions
}

fn script(actions: &[Action]) -> ScriptedPolicy {
    ScriptedPolicy::from_actions(actions)
}

fn replace_typed(plan: &[Action], from: &str, to: &str) -> Vec<Action> {
    plan.iter()
        .map(|a| match a {
            Action::Type { text } if text == from => Action::type_text(to),
            _ => a.clone(),
        })
        .collect()
}

fn expect(switched: bool, success: bool, privacy_blocked: bool, switch_step: Option<usize>) -> Expectation {
    Expectation {
        switched,
        success,
        privacy_blocked,
        switch_step,
    }
}

/// The shipped scenario suite. Requires the default task suite.
pub fn scenario_suite(suite: &TaskSuite) -> Vec<Scenario> {
    let base = CollabConfig::default();
    let create = plan(suite, "contacts-create");
    let wrong_phone = replace_typed(&create, "555-0199", "555-0100");
    let sign_in = plan(suite, "settings-sign-in");
    let wrong_pw = replace_typed(&sign_in, "tulip-42", "tulip-41");
    let sign_in_click = sign_in.last().cloned().expect("sign-in plan is non-empty");
    let favorite = plan(suite, "contacts-favorite");
    let send = plan(suite, "messaging-send");

    let mut v = Vec::new();
    v.push(Scenario {
        name: "competent-local",
        task_id: "contacts-create",
        local: script(&create),
        cloud: CloudKind::Planner,
        config: base.clone(),
        expect: expect(false, true, false, None),
    });
    v.push(Scenario {
        name: "wrong-input-recovered-by-cloud",
        task_id: "contacts-create",
        local: script(&wrong_phone),
        cloud: CloudKind::Planner,
        config: base.clone(),
        expect: expect(true, true, false, Some(6)),
    });
    v.push(Scenario {
        name: "summary-forwarded",
        task_id: "contacts-create",
        local: script(&wrong_phone),
        cloud: CloudKind::SummaryGuided,
        config: base.clone(),
        expect: expect(true, true, false, Some(6)),
    });
    v.push(Scenario {
        name: "summary-suppressed",
        task_id: "contacts-create",
        local: script(&wrong_phone),
        cloud: CloudKind::SummaryGuided,
        config: CollabConfig {
            forward_error_summary: false,
            ..base.clone()
        },
        expect: expect(true, false, false, Some(6)),
    });
    let mut malformed = script(&favorite[..1]);
    malformed.outputs.push("<answer>tap the star</answer>".into());
    v.push(Scenario {
        name: "malformed-output-immediate-check",
        task_id: "contacts-favorite",
        local: malformed,
        cloud: CloudKind::Planner,
        config: base.clone(),
        expect: expect(true, true, false, Some(2)),
    });
    let mut stuck = favorite[..1].to_vec();
    stuck.extend(std::iter::repeat_n(INERT_TAP, 8));
    v.push(Scenario {
        name: "repetition-without-progress",
        task_id: "contacts-favorite",
        local: script(&stuck),
        cloud: CloudKind::Planner,
        config: base.clone(),
        expect: expect(true, true, false, Some(6)),
    });
    let mut hammer = wrong_pw.clone();
    hammer.extend(std::iter::repeat_n(sign_in_click.clone(), 6));
    hammer.push(Action::terminate_success());
    v.push(Scenario {
        name: "credentials-on-screen-block-handoff",
        task_id: "settings-sign-in",
        local: script(&hammer),
        cloud: CloudKind::Planner,
        config: base.clone(),
        expect: expect(false, false, true, None),
    });
    v.push(Scenario {
        name: "sensitive-but-aligned",
        task_id: "settings-sign-in",
        local: script(&sign_in),
        cloud: CloudKind::Planner,
        config: base.clone(),
        expect: expect(false, true, false, None),
    });
    let mut leave = sign_in.clone();
    leave.push(Action::back());
    // three frozen taps are needed, then the next cadence boundary
    let leave_switch = (leave.len() + 3).div_ceil(3) * 3;
    leave.extend(std::iter::repeat_n(INERT_TAP, 6));
    v.push(Scenario {
        name: "handoff-after-leaving-sensitive-screen",
        task_id: "settings-sign-in",
        local: script(&leave),
        cloud: CloudKind::Planner,
        config: base.clone(),
        expect: expect(true, true, false, Some(leave_switch)),
    });
    let mut wander = Vec::new();
    for _ in 0..3 {
        wander.push(Action::back());
        wander.push(Action::Wait);
        wander.push(Action::Swipe {
            direction: crate::action::SwipeDirection::Down,
            point: None,
        });
    }
    v.push(Scenario {
        name: "step-budget-deviation",
        task_id: "messaging-send",
        local: script(&wander),
        cloud: CloudKind::Planner,
        config: CollabConfig {
            monitor: MonitorConfig {
                deviation_budget: 5,
                ..MonitorConfig::default()
            },
            ..base.clone()
        },
        expect: expect(true, true, false, Some(6)),
    });
    v.push(Scenario {
        name: "deviation-without-cloud",
        task_id: "contacts-create",
        local: script(&wrong_phone),
        cloud: CloudKind::Absent,
        config: base.clone(),
        expect: expect(false, false, false, None),
    });
    v.push(Scenario {
        name: "cloud-unreachable",
        task_id: "contacts-create",
        local: script(&wrong_phone),
        cloud: CloudKind::Unreachable,
        config: base.clone(),
        expect: expect(false, false, false, None),
    });
    // seven steps; step 3 overwrites the recipient with a wrong name
    let mut late = send.clone();
    late.insert(3, Action::type_text("Carl Diaz"));
    v.push(Scenario {
        name: "deviation-at-step-3",
        task_id: "messaging-send",
        local: script(&late),
        cloud: CloudKind::Planner,
        config: base,
        expect: expect(true, true, false, Some(6)),
    });
    v
}

pub fn run_scenario(suite: &Arc<TaskSuite>, sc: &Scenario) -> ScenarioResult {
    let task = suite.task(sc.task_id).expect("scenario task exists").clone();
    let planner = PlannerPolicy::new(suite.clone());
    let guided = SummaryGuidedPolicy {
        planner: planner.clone(),
    };
    let cloud: Option<&dyn Policy> = match sc.cloud {
        CloudKind::Absent => None,
        CloudKind::Planner => Some(&planner),
        CloudKind::SummaryGuided => Some(&guided),
        CloudKind::Unreachable => Some(&UnreachablePolicy),
    };
    let mut env = ToyEnv::new(suite.clone());
    let outcome = run_collaborative(&mut env, &task, &sc.local, cloud, &sc.config).expect("environment never faults in-process");
    let failures = check(sc, &outcome);
    ScenarioResult {
        name: sc.name,
        outcome,
        failures,
    }
}

fn check(sc: &Scenario, o: &CollabOutcome) -> Vec<String> {
    let mut bad = Vec::new();
    let switched = o.stats.steps_cloud > 0;
    let blocked = o.stats.privacy_blocks > 0;
    if switched != sc.expect.switched {
        bad.push(format!("switched={switched}, expected {}", sc.expect.switched));
    }
    if o.verdict.success != sc.expect.success {
        bad.push(format!("success={}, expected {}", o.verdict.success, sc.expect.success));
    }
    if blocked != sc.expect.privacy_blocked {
        bad.push(format!("privacy_blocked={blocked}, expected {}", sc.expect.privacy_blocked));
    }
    if sc.expect.switched && o.stats.switch_step != sc.expect.switch_step {
        bad.push(format!("switch_step={:?}, expected {:?}", o.stats.switch_step, sc.expect.switch_step));
    }
    // switch iff a check saw deviation on a non-sensitive screen
    let should_switch = o.checks.iter().any(|c| !c.monitor.aligned && !c.privacy.sensitive);
    let had_cloud = !matches!(sc.cloud, CloudKind::Absent | CloudKind::Unreachable);
    if switched != (should_switch && had_cloud) {
        bad.push("switch decision disagrees with monitor/privacy verdicts".into());
    }
    let ex = o.executors();
    if ex.windows(2).any(|w| w[0] == Executor::Cloud && w[1] == Executor::Local) {
        bad.push("executor sequence oscillates".into());
    }
    let leaks = o.leaks();
    if !leaks.is_empty() {
        bad.push(format!("{} secret(s) reached the cloud", leaks.len()));
    }
    bad
}
