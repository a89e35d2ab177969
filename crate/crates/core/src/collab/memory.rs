//! Unified trajectory memory shared by the on-device and cloud agents, and
//! its projections into each agent's action dialect.
//!
//! The local dialect is function-call text,
//! `step[3,"local","<obs>","<result>","ok",...] -> click({"x":540,"y":1200})`,
//! the cloud dialect is one JSON object per entry. Both are lossless.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::action::{Action, ActionParseError};
use crate::trajectory::EnvStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Executor {
    Local,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub step: usize,
    pub executor: Executor,
    /// Hash of the observation the action was chosen on.
    pub observation: String,
    /// Hash of the observation after the action.
    pub result: String,
    pub screen: String,
    /// Label of the focused text field when the action was chosen.
    #[serde(default)]
    pub focus: Option<String>,
    /// Whether the focused field was marked sensitive.
    #[serde(default)]
    pub sensitive_focus: bool,
    pub env_status: EnvStatus,
    pub thought: String,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    /// Function-call text used by the small on-device model.
    Local,
    /// Structured JSON used by the cloud model.
    Cloud,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("malformed projected entry: {0}")]
    Malformed(String),
    #[error(transparent)]
    Action(#[from] ActionParseError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMemory {
    pub task_id: String,
    pub instruction: String,
    entries: Vec<MemoryEntry>,
}

impl TrajectoryMemory {
    pub fn new(task_id: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            instruction: instruction.into(),
            entries: Vec::new(),
        }
    }

    /// Appends an entry. Memory is append-only.
    pub fn record(&mut self, entry: MemoryEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.entries.iter().map(|e| e.action.clone()).collect()
    }

    pub fn project(&self, dialect: Dialect) -> Vec<String> {
        self.entries.iter().map(|e| project_entry(e, dialect)).collect()
    }

    /// Writes the header line followed by one JSON line per entry.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = json!({"task_id": self.task_id, "instruction": self.instruction});
        writeln!(out, "{header}")?;
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let bad = |e: serde_json::Error| io::Error::new(io::ErrorKind::InvalidData, e);
        let mut lines = input.lines();
        let header: Value = match lines.next() {
            Some(l) => serde_json::from_str(&l?).map_err(bad)?,
            None => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "empty memory file")),
        };
        let field = |k: &str| header.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
        let mut memory = Self::new(field("task_id"), field("instruction"));
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                memory.record(serde_json::from_str(&line).map_err(bad)?);
            }
        }
        Ok(memory)
    }
}

fn status_str(s: EnvStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .expect("status serializes to a string")
}

fn executor_str(e: Executor) -> &'static str {
    match e {
        Executor::Local => "local",
        Executor::Cloud => "cloud",
    }
}

pub fn project_entry(e: &MemoryEntry, dialect: Dialect) -> String {
    let v = e.action.to_value();
    match dialect {
        Dialect::Local => {
            let header = json!([
                e.step,
                executor_str(e.executor),
                e.observation,
                e.result,
                e.screen,
                e.focus,
                e.sensitive_focus,
                status_str(e.env_status),
                e.thought
            ]);
            format!("step{header} -> {}({})", v["action"].as_str().unwrap_or_default(), v["params"])
        }
        Dialect::Cloud => json!({
            "step": e.step,
            "executor": executor_str(e.executor),
            "observation": e.observation,
            "result": e.result,
            "screen": e.screen,
            "focus": e.focus,
            "sensitive_focus": e.sensitive_focus,
            "status": status_str(e.env_status),
            "thought": e.thought,
            "action": v,
        })
        .to_string(),
    }
}

pub fn parse_entry(line: &str, dialect: Dialect) -> Result<MemoryEntry, ProjectionError> {
    let malformed = |m: &str| ProjectionError::Malformed(m.to_string());
    match dialect {
        Dialect::Local => {
            let rest = line.strip_prefix("step").ok_or_else(|| malformed("missing `step` prefix"))?;
            let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<Value>();
            let header = stream
                .next()
                .ok_or_else(|| malformed("missing header"))?
                .map_err(|e| ProjectionError::Malformed(e.to_string()))?;
            let call = rest[stream.byte_offset()..]
                .strip_prefix(" -> ")
                .ok_or_else(|| malformed("missing call arrow"))?;
            let open = call.find('(').ok_or_else(|| malformed("missing `(`"))?;
            let params = call[open + 1..].strip_suffix(')').ok_or_else(|| malformed("missing `)`"))?;
            let params: Value = serde_json::from_str(params).map_err(|e| ProjectionError::Malformed(e.to_string()))?;
            let action = Action::from_value(&json!({"action": &call[..open], "params": params}))?;
            let h = header.as_array().filter(|h| h.len() == 9).ok_or_else(|| malformed("header arity"))?;
            entry_from_parts(
                &h[0], &h[1], &h[2], &h[3], &h[4], &h[5], &h[6], &h[7], &h[8], action,
            )
        }
        Dialect::Cloud => {
            let v: Value = serde_json::from_str(line).map_err(|e| ProjectionError::Malformed(e.to_string()))?;
            let action = Action::from_value(&v["action"])?;
            entry_from_parts(
                &v["step"],
                &v["executor"],
                &v["observation"],
                &v["result"],
                &v["screen"],
                &v["focus"],
                &v["sensitive_focus"],
                &v["status"],
                &v["thought"],
                action,
            )
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn entry_from_parts(
    step: &Value,
    executor: &Value,
    observation: &Value,
    result: &Value,
    screen: &Value,
    focus: &Value,
    sensitive: &Value,
    status: &Value,
    thought: &Value,
    action: Action,
) -> Result<MemoryEntry, ProjectionError> {
    let malformed = |m: &str| ProjectionError::Malformed(m.to_string());
    let s = |v: &Value, name: &str| v.as_str().map(String::from).ok_or_else(|| malformed(name));
    Ok(MemoryEntry {
        step: step.as_u64().ok_or_else(|| malformed("step"))? as usize,
        executor: serde_json::from_value(executor.clone()).map_err(|_| malformed("executor"))?,
        observation: s(observation, "observation")?,
        result: s(result, "result")?,
        screen: s(screen, "screen")?,
        focus: focus.as_str().map(String::from),
        sensitive_focus: sensitive.as_bool().ok_or_else(|| malformed("sensitive_focus"))?,
        env_status: serde_json::from_value(status.clone()).map_err(|_| malformed("status"))?,
        thought: s(thought, "thought")?,
        action,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(step: usize, action: Action) -> MemoryEntry {
        MemoryEntry {
            step,
            executor: Executor::Local,
            observation: format!("h{step}"),
            result: format!("h{}", step + 1),
            screen: "contacts/list".into(),
            focus: None,
            sensitive_focus: false,
            env_status: EnvStatus::Ok,
            thought: "tap -> (the) \"row\"".into(),
            action,
        }
    }

    #[test]
    fn record_appends() {
        let mut m = TrajectoryMemory::new("t", "do it");
        assert!(m.is_empty());
        m.record(entry(0, Action::back()));
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn both_dialects_roundtrip() {
        let mut m = TrajectoryMemory::new("t", "x");
        m.record(entry(0, Action::click(5, 7)));
        let mut e = entry(1, Action::type_text("a) -> b(\"c\""));
        e.focus = Some("phone".into());
        e.executor = Executor::Cloud;
        m.record(e);
        for d in [Dialect::Local, Dialect::Cloud] {
            let back: Vec<MemoryEntry> = m.project(d).iter().map(|l| parse_entry(l, d).unwrap()).collect();
            assert_eq!(back, m.entries());
        }
        assert!(m.project(Dialect::Local)[0].ends_with(r#"-> click({"x":5,"y":7})"#));
    }

    #[test]
    fn persistence_roundtrip() {
        let mut m = TrajectoryMemory::new("t", "x");
        m.record(entry(0, Action::Wait));
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let back = TrajectoryMemory::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.project(Dialect::Local), m.project(Dialect::Local));
    }
}
