//! Declarative task suite: tasks, their verifiers and the tool registry,
//! loaded from one TOML file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tools::{ToolRegistry, ToolSpec};
use super::world::ScreenId;
use crate::task::TaskSpec;
use crate::verify::RuleVerifier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteDefaults {
    #[serde(default)]
    pub interrupt_rate: f64,
}

impl Default for SuiteDefaults {
    fn default() -> Self {
        Self { interrupt_rate: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    #[serde(default)]
    defaults: SuiteDefaults,
    #[serde(default)]
    tasks: Vec<TaskSpec>,
    #[serde(default)]
    verifiers: BTreeMap<String, RuleVerifier>,
    #[serde(default)]
    tools: Vec<ToolSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("cannot read task suite {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid task suite: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid task suite: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub defaults: SuiteDefaults,
    tasks: Vec<TaskSpec>,
    pub verifiers: BTreeMap<String, RuleVerifier>,
    pub tools: ToolRegistry,
}

impl TaskSuite {
    pub fn from_toml(text: &str) -> Result<Self, SuiteError> {
        let file: SuiteFile = toml::from_str(text)?;
        let suite = Self {
            defaults: file.defaults,
            tasks: file.tasks,
            verifiers: file.verifiers,
            tools: ToolRegistry::new(file.tools),
        };
        suite.validate()?;
        Ok(suite)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<(), SuiteError> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tasks {
            let bad = |msg: String| Err(SuiteError::Invalid(format!("task `{}`: {msg}", t.task_id)));
            if !seen.insert(t.task_id.as_str()) {
                return bad("duplicate task id".into());
            }
            if ScreenId::app_home(&t.app).is_none() {
                return bad(format!("unknown app `{}`", t.app));
            }
            if !self.verifiers.contains_key(&t.verifier_id) {
                return bad(format!("unknown verifier `{}`", t.verifier_id));
            }
            if let Some(tool) = t.tools.iter().find(|name| self.tools.get(name).is_none()) {
                return bad(format!("unknown tool `{tool}`"));
            }
            if let Some(r) = t.interrupt_rate {
                if !(0.0..=1.0).contains(&r) {
                    return bad(format!("interrupt_rate {r} outside [0, 1]"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.defaults.interrupt_rate) {
            return Err(SuiteError::Invalid("defaults.interrupt_rate outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == id)
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.task_id.clone()).collect()
    }

    pub fn interrupt_rate(&self, task: &TaskSpec) -> f64 {
        task.interrupt_rate.unwrap_or(self.defaults.interrupt_rate)
    }

    /// A copy restricted to the given task ids, in the given order.
    pub fn subset(&self, ids: &[impl AsRef<str>]) -> Result<Self, SuiteError> {
        let tasks = ids
            .iter()
            .map(|id| {
                self.task(id.as_ref())
                    .cloned()
                    .ok_or_else(|| SuiteError::Invalid(format!("unknown task `{}`", id.as_ref())))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            tasks,
            ..self.clone()
        })
    }

    /// Same suite with every task's interrupt rate forced to `rate`.
    pub fn with_interrupt_rate(&self, rate: f64) -> Self {
        let mut s = self.clone();
        s.defaults.interrupt_rate = rate;
        for t in &mut s.tasks {
            t.interrupt_rate = Some(rate);
        }
        s
    }
}
