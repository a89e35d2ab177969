//! Mock MCP tool registry. Every handler is a pure function of the backend
//! records and the call arguments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::hashing::fnv1a;
use crate::verify::Records;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "handler", rename_all = "snake_case")]
pub enum ToolHandler {
    /// Reads one backend record; `key` may reference arguments as `{param}`.
    Records { key: String },
    /// Static lookup on the single argument's value.
    Table { table: BTreeMap<String, String> },
    /// Deterministic pseudo-random integer in `1..=modulus` derived from the
    /// tool name and arguments.
    Hashed { modulus: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    /// Required string arguments.
    pub params: Vec<String>,
    /// Name of the result field.
    pub field: String,
    #[serde(flatten)]
    pub handler: ToolHandler,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{tool}` needs string argument `{param}`")]
    BadArguments { tool: String, param: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
}

impl ToolRegistry {
    pub fn new(specs: impl IntoIterator<Item = ToolSpec>) -> Self {
        Self {
            tools: specs.into_iter().map(|s| (s.name.clone(), s)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    /// Runs a tool. A lookup that finds nothing is a successful call whose
    /// result carries an `error` field.
    pub fn call(&self, name: &str, args: &BTreeMap<String, Value>, records: &Records) -> Result<Value, ToolError> {
        let spec = self.get(name).ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        let mut strs = BTreeMap::new();
        for p in &spec.params {
            let v = args.get(p).and_then(Value::as_str).ok_or_else(|| ToolError::BadArguments {
                tool: name.to_string(),
                param: p.clone(),
            })?;
            strs.insert(p.as_str(), v.to_string());
        }
        let found = match &spec.handler {
            ToolHandler::Records { key } => {
                let key = strs.iter().fold(key.clone(), |k, (p, v)| k.replace(&format!("{{{p}}}"), v));
                records.get(&key).cloned()
            }
            ToolHandler::Table { table } => strs.values().next().and_then(|v| table.get(v).cloned()),
            ToolHandler::Hashed { modulus } => {
                let canonical = serde_json::to_string(&strs).expect("string map serializes");
                Some((fnv1a(format!("{name}|{canonical}").as_bytes()) % (*modulus).max(1) + 1).to_string())
            }
        };
        Ok(match found {
            Some(v) => json!({"tool": name, (spec.field.as_str()): v}),
            None => json!({"tool": name, "error": "not found"}),
        })
    }
}

/// First non-`tool` string field of a tool result, if any.
pub fn result_value(result: &Value) -> Option<&str> {
    result
        .as_object()?
        .iter()
        .find(|(k, _)| k.as_str() != "tool" && k.as_str() != "error")
        .and_then(|(_, v)| v.as_str())
}
