//! The deterministic simulated GUI world and the environment primitives
//! (`reset`, `step`, `observation`, `evaluate`, `close`) over it.

pub mod solver;
pub mod suite;
pub mod tools;
pub mod user;
pub mod world;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::action::Action;
use crate::observation::Observation;
use crate::task::TaskSpec;
use crate::trajectory::EnvStatus;
use crate::verify::{Records, Verdict, ANSWER_KEY};

pub use suite::{SuiteError, TaskSuite};
pub use tools::{ToolHandler, ToolRegistry, ToolSpec};
pub use world::{WorldState, SCREEN_HEIGHT, SCREEN_WIDTH};

pub const AUX_USER_REPLY: &str = "user_reply";
pub const AUX_MCP_RESULT: &str = "mcp_result";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("no active episode")]
    EpisodeClosed,
    #[error("episode already terminated")]
    EpisodeFinished,
    #[error("unknown verifier `{0}`")]
    UnknownVerifier(String),
    #[error("environment backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub env_status: EnvStatus,
    /// True once a terminate action froze the episode.
    pub done: bool,
}

/// The RL primitives every environment exposes.
pub trait Environment {
    fn reset(&mut self, task_id: &str, seed: Option<u64>) -> Result<Observation, EnvError>;
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;
    fn observation(&self) -> Result<Observation, EnvError>;
    fn evaluate(&self) -> Result<Verdict, EnvError>;
    fn close(&mut self) -> Result<(), EnvError>;
}

/// One live episode of a task in the simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: TaskSpec,
    pub world: WorldState,
    pub aux: BTreeMap<String, Value>,
    pub finished: bool,
}

impl Episode {
    pub fn start(suite: &TaskSuite, task: &TaskSpec, seed: Option<u64>) -> Self {
        let world = WorldState::initial(
            &task.app,
            seed.unwrap_or(task.init_seed),
            suite.interrupt_rate(task),
            &task.init_records,
        )
        .expect("suite validation guarantees a known app");
        Self {
            task: task.clone(),
            world,
            aux: BTreeMap::new(),
            finished: false,
        }
    }

    pub fn observation(&self) -> Observation {
        let mut obs = self.world.render();
        obs.aux = self.aux.clone();
        obs
    }

    /// Applies one action. Auxiliary outputs (user replies, tool results)
    /// live until the next step.
    pub fn apply(&mut self, action: &Action, tools: &ToolRegistry) -> EnvStatus {
        self.aux.clear();
        let mut status = self.world.apply(action);
        if status != EnvStatus::Ok {
            return status;
        }
        match action {
            Action::AskUser { text } => {
                let reply = user::user_reply(self.task.hidden_context.as_ref(), text);
                self.aux.insert(AUX_USER_REPLY.into(), Value::from(reply));
            }
            Action::McpCall { tool, args } => {
                let result = if self.task.tools.iter().any(|t| t == tool) {
                    tools.call(tool, args, &self.world.records).map_err(|e| e.to_string())
                } else {
                    Err(format!("tool `{tool}` is not granted for this task"))
                };
                let value = result.unwrap_or_else(|e| {
                    status = EnvStatus::ActionFailed;
                    json!({"tool": tool, "error": e})
                });
                self.aux.insert(AUX_MCP_RESULT.into(), value);
            }
            Action::Answer { text } => {
                self.world.records.insert(ANSWER_KEY.into(), text.clone());
            }
            Action::Terminate { .. } => self.finished = true,
            _ => {}
        }
        status
    }

    pub fn records(&self) -> &Records {
        &self.world.records
    }
}

/// In-process simulated environment bound to a task suite.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    suite: Arc<TaskSuite>,
    episode: Option<Episode>,
}

impl ToyEnv {
    pub fn new(suite: Arc<TaskSuite>) -> Self {
        Self { suite, episode: None }
    }

    pub fn suite(&self) -> &Arc<TaskSuite> {
        &self.suite
    }

    pub fn episode(&self) -> Option<&Episode> {
        self.episode.as_ref()
    }

    fn live(&self) -> Result<&Episode, EnvError> {
        self.episode.as_ref().ok_or(EnvError::EpisodeClosed)
    }

    /// Final backend state of the current episode.
    pub fn records(&self) -> Result<&Records, EnvError> {
        Ok(self.live()?.records())
    }
}

impl Environment for ToyEnv {
    fn reset(&mut self, task_id: &str, seed: Option<u64>) -> Result<Observation, EnvError> {
        let task = self
            .suite
            .task(task_id)
            .ok_or_else(|| EnvError::UnknownTask(task_id.to_string()))?;
        let ep = Episode::start(&self.suite, task, seed);
        let obs = ep.observation();
        self.episode = Some(ep);
        Ok(obs)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        let tools = &self.suite.tools;
        let ep = self.episode.as_mut().ok_or(EnvError::EpisodeClosed)?;
        if ep.finished {
            return Err(EnvError::EpisodeFinished);
        }
        let env_status = ep.apply(action, tools);
        Ok(StepOutcome {
            observation: ep.observation(),
            env_status,
            done: ep.finished,
        })
    }

    fn observation(&self) -> Result<Observation, EnvError> {
        Ok(self.live()?.observation())
    }

    fn evaluate(&self) -> Result<Verdict, EnvError> {
        let ep = self.live()?;
        let verifier = self
            .suite
            .verifiers
            .get(&ep.task.verifier_id)
            .ok_or_else(|| EnvError::UnknownVerifier(ep.task.verifier_id.clone()))?;
        Ok(verifier.check(ep.records()))
    }

    fn close(&mut self) -> Result<(), EnvError> {
        self.episode.take().map(|_| ()).ok_or(EnvError::EpisodeClosed)
    }
}
