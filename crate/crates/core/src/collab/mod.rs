//! Device-cloud collaboration: a small local agent drives the episode while
//! a monitor watches the shared memory; on deviation the run is handed to a
//! cloud agent unless the current context is privacy-sensitive.

pub mod agents;
pub mod memory;
pub mod monitor;
pub mod privacy;
pub mod scenarios;

use serde::{Deserialize, Serialize};

use crate::action::{extract_tag, parse_action, Action};
use crate::env::{EnvError, Environment};
use crate::observation::Observation;
use crate::policy::{notes_from_aux, GenerateRequest, Note, Policy};
use crate::task::TaskSpec;
use crate::trajectory::{EnvStatus, Step, Trajectory};
use crate::verify::Verdict;

pub use agents::{PlannerPolicy, SummaryGuidedPolicy};
pub use memory::{Dialect, Executor, MemoryEntry, TrajectoryMemory};
pub use monitor::{monitor_check, MonitorConfig, MonitorVerdict, Signal};
pub use privacy::{privacy_check, redact, secrets, taint_audit, PrivacyVerdict, REDACTED};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum RouteDecision {
    StayLocal,
    SwitchToCloud { error_summary: String },
    StayLocalPrivacyBlocked { evidence: Vec<String> },
    /// Already handed over; the cloud finishes the task.
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterState {
    pub mode: Executor,
    pub cadence: usize,
    pub switch_count: usize,
    pub steps_local: usize,
    pub steps_cloud: usize,
}

impl RouterState {
    pub fn new(cadence: usize) -> Self {
        assert!(cadence >= 1, "check cadence must be at least 1");
        Self {
            mode: Executor::Local,
            cadence,
            switch_count: 0,
            steps_local: 0,
            steps_cloud: 0,
        }
    }
}

/// Switches iff the monitor reports deviation and the context is not
/// sensitive. The mode only ever moves from local to cloud.
pub fn route_step(router: &mut RouterState, monitor: &MonitorVerdict, privacy: &PrivacyVerdict) -> RouteDecision {
    if router.mode == Executor::Cloud {
        return RouteDecision::Cloud;
    }
    if monitor.aligned {
        return RouteDecision::StayLocal;
    }
    if privacy.sensitive {
        return RouteDecision::StayLocalPrivacyBlocked {
            evidence: privacy.evidence.clone(),
        };
    }
    router.mode = Executor::Cloud;
    router.switch_count += 1;
    RouteDecision::SwitchToCloud {
        error_summary: monitor.error_summary.clone().unwrap_or_default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabConfig {
    /// Monitor runs every `cadence` local steps and right after a failed action.
    pub cadence: usize,
    pub max_steps: usize,
    pub monitor: MonitorConfig,
    /// Forward the monitor's summary to the cloud agent on handoff.
    pub forward_error_summary: bool,
}

impl Default for CollabConfig {
    fn default() -> Self {
        Self {
            cadence: 3,
            max_steps: 30,
            monitor: MonitorConfig::default(),
            forward_error_summary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    /// Number of executed steps when the check ran.
    pub after_step: usize,
    pub monitor: MonitorVerdict,
    pub privacy: PrivacyVerdict,
    pub decision: RouteDecision,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RouterStats {
    pub steps_local: usize,
    pub steps_cloud: usize,
    /// Index of the first step executed by the cloud agent.
    pub switch_step: Option<usize>,
    pub on_device_completion: bool,
    pub privacy_blocks: usize,
    pub cloud_calls: usize,
}

impl RouterStats {
    pub fn local_fraction(&self) -> f64 {
        let total = self.steps_local + self.steps_cloud;
        if total == 0 {
            0.0
        } else {
            self.steps_local as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabOutcome {
    pub trajectory: Trajectory,
    pub memory: TrajectoryMemory,
    pub stats: RouterStats,
    pub verdict: Verdict,
    pub checks: Vec<CheckRecord>,
    /// Every serialized request sent to the cloud agent.
    pub cloud_requests: Vec<String>,
    pub warnings: Vec<String>,
}

impl CollabOutcome {
    pub fn executors(&self) -> Vec<Executor> {
        self.memory.entries().iter().map(|e| e.executor).collect()
    }

    /// Secrets that leaked into cloud-bound requests; empty when clean.
    pub fn leaks(&self) -> Vec<String> {
        taint_audit(&self.cloud_requests, &secrets(&self.memory))
    }
}

struct Context<'a> {
    task: &'a TaskSpec,
    notes: Vec<Note>,
}

impl Context<'_> {
    fn request(&self, history: String, obs: &Observation, step: usize, error_summary: Option<String>) -> GenerateRequest {
        GenerateRequest {
            task_id: self.task.task_id.clone(),
            instruction: self.task.instruction.clone(),
            history,
            observation: obs.clone(),
            image_refs: vec![obs.hash().to_string()],
            notes: self.notes.clone(),
            tools: self.task.tools.clone(),
            error_summary,
            step_index: step,
            seed: self.task.init_seed ^ step as u64,
        }
    }
}

/// Executes one task under device-cloud routing. A missing or unreachable
/// cloud agent degrades the run to local-only with a warning.
pub fn run_collaborative(
    env: &mut dyn Environment,
    task: &TaskSpec,
    local: &dyn Policy,
    cloud: Option<&dyn Policy>,
    cfg: &CollabConfig,
) -> Result<CollabOutcome, EnvError> {
    let mut obs = env.reset(&task.task_id, None)?;
    let mut memory = TrajectoryMemory::new(&task.task_id, &task.instruction);
    let mut traj = Trajectory::new(&task.task_id, cfg.max_steps);
    let mut router = RouterState::new(cfg.cadence);
    let mut stats = RouterStats::default();
    let mut checks = Vec::new();
    let mut cloud_requests = Vec::new();
    let mut warnings = Vec::new();
    let mut summary: Option<String> = None;
    let mut degraded = cloud.is_none();
    if degraded {
        warnings.push("cloud agent unavailable: running local-only".to_string());
    }
    let mut ctx = Context {
        task,
        notes: Vec::new(),
    };

    for step in 0..cfg.max_steps {
        let mut executor = router.mode;
        let mut response = None;
        if let (Executor::Cloud, Some(cloud_policy)) = (executor, cloud) {
            let secret = secrets(&memory);
            let history = memory
                .project(Dialect::Cloud)
                .iter()
                .map(|l| redact(l, &secret))
                .collect::<Vec<_>>()
                .join("\n");
            let mut req = ctx.request(history, &obs, step, summary.clone());
            req.instruction = redact(&req.instruction, &secret);
            req.notes.iter_mut().for_each(|n| n.text = redact(&n.text, &secret));
            req.observation.layout.iter_mut().for_each(|w| w.value = redact(&w.value, &secret));
            cloud_requests.push(serde_json::to_string(&req).expect("request serializes"));
            stats.cloud_calls += 1;
            match cloud_policy.generate(&req) {
                Ok(r) => response = Some(r),
                // unreachable before the first cloud step: finish on device
                Err(e) if stats.steps_cloud == 0 => {
                    warnings.push(format!("cloud agent unavailable at step {step} ({e}): running local-only"));
                    degraded = true;
                    router.mode = Executor::Local;
                    stats.switch_step = None;
                    executor = Executor::Local;
                }
                Err(e) => {
                    warnings.push(format!("cloud agent failed at step {step}: {e}"));
                    break;
                }
            }
        }
        let response = match response {
            Some(r) => r,
            None => {
                let history = memory.project(Dialect::Local).join("\n");
                match local.generate(&ctx.request(history, &obs, step, None)) {
                    Ok(r) => r,
                    Err(e) => {
                        warnings.push(format!("local agent failed at step {step}: {e}"));
                        break;
                    }
                }
            }
        };

        let parsed = parse_action(&response.text);
        let (action, malformed) = match parsed {
            Ok(a) => (a, false),
            Err(_) => (Action::Wait, true),
        };
        let focus = obs.focused().map(|w| (w.label.clone(), w.sensitive));
        let out = env.step(&action)?;
        let env_status = if malformed { EnvStatus::ActionFailed } else { out.env_status };
        let before = std::mem::replace(&mut obs, out.observation);
        ctx.notes.extend(notes_from_aux(&obs.aux));

        memory.record(MemoryEntry {
            step,
            executor,
            observation: before.hash().to_string(),
            result: obs.hash().to_string(),
            screen: before.screen.clone(),
            focus: focus.as_ref().map(|f| f.0.clone()),
            sensitive_focus: focus.is_some_and(|f| f.1),
            env_status,
            thought: extract_tag(&response.text, "thinking").unwrap_or_default().trim().to_string(),
            action: action.clone(),
        });
        traj.push(Step {
            index: step,
            observation: before,
            model_output: response.text,
            action: action.clone(),
            env_status,
            sample: None,
        })
        .expect("steps are bounded by max_steps");
        match executor {
            Executor::Local => {
                router.steps_local += 1;
                stats.steps_local += 1;
            }
            Executor::Cloud => {
                router.steps_cloud += 1;
                stats.steps_cloud += 1;
            }
        }
        if out.done {
            break;
        }

        let due = (step + 1) % cfg.cadence == 0 || env_status == EnvStatus::ActionFailed;
        if router.mode == Executor::Local && !degraded && due {
            let monitor = monitor_check(&memory, &cfg.monitor);
            let privacy = privacy_check(&obs, memory.entries().last());
            let decision = route_step(&mut router, &monitor, &privacy);
            match &decision {
                RouteDecision::SwitchToCloud { error_summary } => {
                    stats.switch_step = Some(step + 1);
                    summary = cfg.forward_error_summary.then(|| error_summary.clone());
                    log::info!("switching to cloud after step {step}: {error_summary}");
                }
                RouteDecision::StayLocalPrivacyBlocked { evidence } => {
                    stats.privacy_blocks += 1;
                    log::info!("cloud handoff blocked by sensitive context: {}", evidence.join(", "));
                }
                _ => {}
            }
            checks.push(CheckRecord {
                after_step: step + 1,
                monitor,
                privacy,
                decision,
            });
        }
    }

    let verdict = env.evaluate()?;
    traj.terminal = traj.steps.last().is_some_and(|s| s.action.is_terminate());
    traj.verdict = Some(verdict.clone());
    stats.on_device_completion = verdict.success && stats.steps_cloud == 0;
    Ok(CollabOutcome {
        trajectory: traj,
        memory,
        stats,
        verdict,
        checks,
        cloud_requests,
        warnings,
    })
}
