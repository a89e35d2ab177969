//! Task specifications and their running success statistics.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::grpo::curriculum::Stratum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskStats {
    pub attempts: u64,
    pub successes: u64,
}

impl TaskStats {
    pub fn record(&mut self, success: bool) {
        self.attempts += 1;
        self.successes += u64::from(success);
    }

    pub fn success_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    /// App the episode starts in (`launcher` for the home screen).
    pub app: String,
    #[serde(rename = "seed")]
    pub init_seed: u64,
    #[serde(rename = "verifier")]
    pub verifier_id: String,
    /// Information deliberately left out of the instruction; only the
    /// synthetic user knows it.
    #[serde(default)]
    pub hidden_context: Option<BTreeMap<String, String>>,
    /// MCP tools this task may call.
    #[serde(default)]
    pub tools: Vec<String>,
    /// Backend records forced on top of the seeded app data.
    #[serde(default)]
    pub init_records: BTreeMap<String, String>,
    #[serde(default)]
    pub interrupt_rate: Option<f64>,
    #[serde(default)]
    pub stats: TaskStats,
}

impl TaskSpec {
    pub fn stratum(&self) -> Stratum {
        Stratum::from_success_rate(self.stats.success_rate())
    }

    /// Slots named in the instruction, e.g. `name "Alice"` -> `name = Alice`.
    pub fn instruction_slots(&self) -> BTreeMap<String, String> {
        extract_slots(&self.instruction)
    }
}

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(\w+)(?: is)? "([^"]*)""#).expect("valid regex"))
}

/// Extracts `key "value"` and `key is "value"` pairs; later mentions win.
pub fn extract_slots(text: &str) -> BTreeMap<String, String> {
    slot_regex()
        .captures_iter(text)
        .map(|c| (c[1].to_lowercase(), c[2].to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_from_instruction_and_reply() {
        let s = extract_slots(r#"Create a contact with name "Alice Chen" and phone "555-0101"."#);
        assert_eq!(s["name"], "Alice Chen");
        assert_eq!(s["phone"], "555-0101");
        let r = extract_slots(r#"The recipient is "Bob"."#);
        assert_eq!(r["recipient"], "Bob");
        assert!(extract_slots("no quotes here").is_empty());
    }

    #[test]
    fn stats_keep_successes_bounded() {
        let mut st = TaskStats::default();
        assert_eq!(st.success_rate(), 0.0);
        st.record(true);
        st.record(false);
        assert!(st.successes <= st.attempts);
        assert_eq!(st.success_rate(), 0.5);
    }
}
