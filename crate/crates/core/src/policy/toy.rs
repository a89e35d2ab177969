//! Template policy over the simulated phone: a linear softmax chooses one of
//! 17 action templates from hashed state features, and the template is
//! grounded against the current observation.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::softmax::{Decision, SoftmaxPolicy};
use super::{GenerateRequest, GenerateResponse, NoteSource, Policy, PolicyError};
use crate::action::{format_model_output, Action, Point, SwipeDirection};
use crate::env::tools::result_value;
use crate::hashing::fnv1a;
use crate::observation::{Layer, Observation, WidgetKind};
use crate::task::extract_slots;

pub const CLICK_SLOTS: usize = 8;
pub const TEMPLATE_COUNT: usize = CLICK_SLOTS + 9;
pub const DEFAULT_FEATURE_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Click(u8),
    TypeSlot,
    SwipeUp,
    SwipeDown,
    Back,
    Wait,
    AskUser,
    McpCall,
    Answer,
    Terminate,
}

impl Template {
    pub fn index(self) -> u32 {
        let tail = CLICK_SLOTS as u32;
        match self {
            Template::Click(i) => i as u32,
            Template::TypeSlot => tail,
            Template::SwipeUp => tail + 1,
            Template::SwipeDown => tail + 2,
            Template::Back => tail + 3,
            Template::Wait => tail + 4,
            Template::AskUser => tail + 5,
            Template::McpCall => tail + 6,
            Template::Answer => tail + 7,
            Template::Terminate => tail + 8,
        }
    }

    pub fn from_index(i: u32) -> Option<Template> {
        let tail = CLICK_SLOTS as u32;
        Some(match i {
            i if i < tail => Template::Click(i as u8),
            i => match i - tail {
                0 => Template::TypeSlot,
                1 => Template::SwipeUp,
                2 => Template::SwipeDown,
                3 => Template::Back,
                4 => Template::Wait,
                5 => Template::AskUser,
                6 => Template::McpCall,
                7 => Template::Answer,
                8 => Template::Terminate,
                _ => return None,
            },
        })
    }
}

/// Everything the toy policy extracts from a request.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub state_key: String,
    pub clickables: Vec<Point>,
    pub focus: Option<String>,
    pub slots: BTreeMap<String, String>,
    pub tool: Option<String>,
    pub tool_value: Option<String>,
}

impl PolicyInput {
    pub fn from_request(req: &GenerateRequest) -> Self {
        let obs = &req.observation;
        let dialog = obs.has_dialog();
        let clickables: Vec<Point> = obs
            .layout
            .iter()
            .filter(|w| !dialog || w.layer == Layer::Dialog)
            .filter(|w| {
                matches!(
                    w.kind,
                    WidgetKind::Button | WidgetKind::ListItem | WidgetKind::Toggle | WidgetKind::Textfield
                )
            })
            .map(|w| w.bbox.center())
            .collect();
        let focus = obs.focused().map(|w| w.label.clone());

        let mut slots = extract_slots(&req.instruction);
        let mut tool_value = None;
        for note in &req.notes {
            match note.source {
                NoteSource::User => slots.extend(extract_slots(&note.text)),
                NoteSource::Tool => {
                    if let Some(v) = serde_json::from_str::<Value>(&note.text).ok().as_ref().and_then(result_value) {
                        tool_value = Some(v.to_string());
                    }
                }
            }
        }
        let answered = req.history.contains(r#""action":"answer""#);
        let state_key = state_key(obs, dialog, &slots, tool_value.is_some(), answered);
        Self {
            state_key,
            clickables,
            focus,
            slots,
            tool: req.tools.first().cloned(),
            tool_value,
        }
    }

    pub fn valid_templates(&self) -> Vec<u32> {
        let mut out: Vec<u32> = (0..self.clickables.len().min(CLICK_SLOTS) as u32).collect();
        let known_focus = self.focus.as_ref().map(|f| self.slots.contains_key(f));
        if known_focus == Some(true) {
            out.push(Template::TypeSlot.index());
        }
        out.extend([Template::SwipeUp, Template::SwipeDown, Template::Back, Template::Wait].map(Template::index));
        if known_focus == Some(false) {
            out.push(Template::AskUser.index());
        }
        if self.tool.is_some() {
            out.push(Template::McpCall.index());
        }
        if self.tool_value.is_some() {
            out.push(Template::Answer.index());
        }
        out.push(Template::Terminate.index());
        out
    }

    /// Bias, task-specific state and task-agnostic state features.
    pub fn features(&self, instruction: &str, dim: usize) -> Vec<u32> {
        assert!(dim >= 2, "feature space needs a bias and at least one bucket");
        let bucket = |s: String| (fnv1a(s.as_bytes()) % (dim as u64 - 1) + 1) as u32;
        vec![
            0,
            bucket(format!("task|{instruction}|{}", self.state_key)),
            bucket(format!("state|{}", self.state_key)),
        ]
    }

    /// Grounds a template into a concrete action (in request coordinates).
    pub fn ground(&self, t: Template) -> Action {
        match t {
            Template::Click(i) => {
                let p = self.clickables[i as usize];
                Action::click(p.x, p.y)
            }
            Template::TypeSlot => {
                let field = self.focus.as_deref().unwrap_or_default();
                Action::type_text(self.slots.get(field).cloned().unwrap_or_default())
            }
            Template::SwipeUp => Action::Swipe {
                direction: SwipeDirection::Up,
                point: None,
            },
            Template::SwipeDown => Action::Swipe {
                direction: SwipeDirection::Down,
                point: None,
            },
            Template::Back => Action::back(),
            Template::Wait => Action::Wait,
            Template::AskUser => Action::AskUser {
                text: format!("What is the {}?", self.focus.as_deref().unwrap_or("missing detail")),
            },
            Template::McpCall => Action::McpCall {
                tool: self.tool.clone().unwrap_or_default(),
                args: self.slots.iter().map(|(k, v)| (k.clone(), Value::from(v.clone()))).collect(),
            },
            Template::Answer => Action::Answer {
                text: self.tool_value.clone().unwrap_or_default(),
            },
            Template::Terminate => Action::terminate_success(),
        }
    }
}

fn state_key(obs: &Observation, dialog: bool, slots: &BTreeMap<String, String>, tool: bool, answered: bool) -> String {
    let mut parts = vec![obs.screen.clone()];
    for w in &obs.layout {
        match w.kind {
            WidgetKind::Label if w.id == "title" || w.id == "status" => parts.push(w.label.clone()),
            WidgetKind::Toggle => parts.push(format!("{}={}", w.label, w.value)),
            WidgetKind::Textfield => {
                let state = match (w.focused, w.value.is_empty()) {
                    (true, _) => "*",
                    (false, true) => "",
                    (false, false) => "+",
                };
                parts.push(format!("{}{state}", w.label));
            }
            _ => {}
        }
    }
    parts.push(format!("dialog={dialog} tool={tool} answered={answered} slots={}", slots.len()));
    parts.join("|")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub model: SoftmaxPolicy,
    /// Sampling temperature; zero means greedy.
    pub temperature: f64,
}

impl ToyPolicy {
    pub fn new(dim: usize, temperature: f64) -> Self {
        Self {
            model: SoftmaxPolicy::zeros(dim, TEMPLATE_COUNT),
            temperature,
        }
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self {
            model: self.model.clone(),
            temperature,
        }
    }

    /// Chooses a template and grounds it. Deterministic given the request.
    pub fn act(&self, req: &GenerateRequest) -> Result<(Action, Decision, f64), PolicyError> {
        let input = PolicyInput::from_request(req);
        let features = input.features(&req.instruction, self.model.dim);
        let valid = input.valid_templates();
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let (choice, logprob) = self
            .model
            .sample(&features, &valid, self.temperature, &mut rng)
            .map_err(|e| PolicyError::BadRequest(e.to_string()))?;
        let template = Template::from_index(choice).expect("sampled from valid templates");
        let decision = Decision {
            features,
            valid,
            action: choice,
        };
        Ok((input.ground(template), decision, logprob))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let body = serde_json::to_vec(self).map_err(io::Error::other)?;
        std::fs::write(path, body)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let body = std::fs::read(path)?;
        let policy: ToyPolicy = serde_json::from_slice(&body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if policy.model.actions != TEMPLATE_COUNT || policy.model.weights.len() != policy.model.dim * TEMPLATE_COUNT {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "checkpoint shape does not match the template set"));
        }
        Ok(policy)
    }
}

impl Policy for ToyPolicy {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        let (action, decision, logprob) = self.act(req)?;
        let thought = format!("template {} on {}", decision.action, req.observation.screen);
        Ok(GenerateResponse {
            text: format_model_output(&thought, &action),
            sample: Some(decision.to_sample(logprob)),
            policy_version: self.model.version,
        })
    }

    fn version(&self) -> u64 {
        self.model.version
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::world::WorldState;
    use crate::policy::Note;

    fn request(instruction: &str, obs: Observation, notes: Vec<Note>) -> GenerateRequest {
        GenerateRequest {
            task_id: "t".into(),
            instruction: instruction.into(),
            history: String::new(),
            observation: obs,
            image_refs: vec![],
            notes,
            tools: vec![],
            error_summary: None,
            step_index: 0,
            seed: 7,
        }
    }

    #[test]
    fn template_indices_roundtrip() {
        for i in 0..TEMPLATE_COUNT as u32 {
            assert_eq!(Template::from_index(i).unwrap().index(), i);
        }
        assert!(Template::from_index(TEMPLATE_COUNT as u32).is_none());
    }

    #[test]
    fn masks_follow_the_screen() {
        let w = WorldState::initial("settings", 1, 0.0, &Default::default()).unwrap();
        let input = PolicyInput::from_request(&request("Turn on dark mode.", w.render(), vec![]));
        let valid = input.valid_templates();
        assert!(!valid.contains(&Template::TypeSlot.index()));
        assert!(!valid.contains(&Template::McpCall.index()));
        assert!(!valid.contains(&Template::Answer.index()));
        assert_eq!(valid.iter().filter(|&&v| v < CLICK_SLOTS as u32).count(), input.clickables.len());
    }

    #[test]
    fn user_replies_fill_slots() {
        let w = WorldState::initial("settings", 1, 0.0, &Default::default()).unwrap();
        let note = Note {
            source: NoteSource::User,
            text: r#"The phone is "555-0177"."#.into(),
        };
        let input = PolicyInput::from_request(&request("x", w.render(), vec![note]));
        assert_eq!(input.slots.get("phone").map(String::as_str), Some("555-0177"));
    }

    #[test]
    fn generation_is_seed_deterministic_and_logprob_exact() {
        let mut p = ToyPolicy::new(64, 1.0);
        p.model.weights.iter_mut().enumerate().for_each(|(i, w)| *w = (i as f64 * 0.37).sin());
        let w = WorldState::initial("contacts", 3, 0.0, &Default::default()).unwrap();
        let req = request("Delete the contact \"Dan Wu\".", w.render(), vec![]);
        let a = p.generate(&req).unwrap();
        let b = p.generate(&req).unwrap();
        assert_eq!(a, b);
        let sample = a.sample.unwrap();
        let d = Decision::from_sample(&sample).unwrap();
        assert!((p.model.log_prob(&d, 1.0).unwrap() - sample.logprobs[0]).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut p = ToyPolicy::new(16, 1.0);
        p.model.apply_update(&vec![0.25; 16 * TEMPLATE_COUNT], 1.0).unwrap();
        p.save(&path).unwrap();
        assert_eq!(ToyPolicy::load(&path).unwrap(), p);
        std::fs::write(&path, "{}").unwrap();
        assert!(ToyPolicy::load(&path).is_err());
    }
}
