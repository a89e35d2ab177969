//! Policy contract shared by rollout workers, the policy service and the
//! device-cloud runtime, plus the reference implementations.

pub mod softmax;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::action::{format_model_output, Action};
use crate::observation::Observation;
use crate::trajectory::TokenSample;

pub use softmax::{Decision, SoftmaxPolicy};
pub use toy::{PolicyInput, Template, ToyPolicy, TEMPLATE_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteSource {
    User,
    Tool,
}

/// Information gathered during the episode that is not on screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub source: NoteSource,
    pub text: String,
}

/// Body of `POST /generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub task_id: String,
    pub instruction: String,
    /// Rendered history of previous steps.
    pub history: String,
    /// Observation as the model sees it (already resized).
    pub observation: Observation,
    #[serde(default)]
    pub image_refs: Vec<String>,
    #[serde(default)]
    pub notes: Vec<Note>,
    /// MCP tools granted for the task.
    #[serde(default)]
    pub tools: Vec<String>,
    /// Monitor diagnosis forwarded on a device-to-cloud handoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_summary: Option<String>,
    pub step_index: usize,
    /// Sampling seed; identical requests with identical seeds produce
    /// identical outputs.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<TokenSample>,
    #[serde(default)]
    pub policy_version: u64,
}

impl GenerateResponse {
    pub fn plain(thought: &str, action: &Action) -> Self {
        Self {
            text: format_model_output(thought, action),
            sample: None,
            policy_version: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy unavailable: {0}")]
    Unavailable(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
}

/// Turns the auxiliary outputs of a step (user reply, tool result) into notes.
pub fn notes_from_aux(aux: &std::collections::BTreeMap<String, serde_json::Value>) -> Vec<Note> {
    let mut out = Vec::new();
    if let Some(reply) = aux.get(crate::env::AUX_USER_REPLY).and_then(|v| v.as_str()) {
        out.push(Note {
            source: NoteSource::User,
            text: reply.to_string(),
        });
    }
    if let Some(result) = aux.get(crate::env::AUX_MCP_RESULT) {
        out.push(Note {
            source: NoteSource::Tool,
            text: result.to_string(),
        });
    }
    out
}

pub trait Policy: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError>;

    fn version(&self) -> u64 {
        0
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        (**self).generate(req)
    }

    fn version(&self) -> u64 {
        (**self).version()
    }
}

/// Emits a fixed script of raw outputs by step index, then `fallback`.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub outputs: Vec<String>,
    pub fallback: String,
}

impl ScriptedPolicy {
    pub fn from_actions(actions: &[Action]) -> Self {
        Self {
            outputs: actions
                .iter()
                .enumerate()
                .map(|(i, a)| format_model_output(&format!("scripted step {i}"), a))
                .collect(),
            fallback: format_model_output("script exhausted", &Action::terminate_success()),
        }
    }
}

impl Policy for ScriptedPolicy {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        let text = self.outputs.get(req.step_index).unwrap_or(&self.fallback).clone();
        Ok(GenerateResponse {
            text,
            sample: None,
            policy_version: 0,
        })
    }
}
