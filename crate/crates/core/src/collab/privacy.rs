//! Privacy gate: decides whether the current context may be shown to the
//! cloud agent, and scrubs secrets from anything that is.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::memory::{MemoryEntry, TrajectoryMemory};
use crate::action::Action;
use crate::observation::Observation;
use crate::task::extract_slots;

pub const REDACTED: &str = "[REDACTED]";

fn credential_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(password|passcode|passwd|pin|otp|secret|credential|token)s?\b").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyVerdict {
    pub sensitive: bool,
    /// Widget ids and field names that triggered the verdict.
    pub evidence: Vec<String>,
}

/// Sensitive when a flagged widget is on screen, a visible field is named
/// like a credential, or the last action typed into a sensitive field.
pub fn privacy_check(obs: &Observation, last: Option<&MemoryEntry>) -> PrivacyVerdict {
    let mut evidence = BTreeSet::new();
    for w in &obs.layout {
        if w.sensitive {
            evidence.insert(w.id.clone());
        } else if credential_regex().is_match(&w.label) {
            evidence.insert(format!("label:{}", w.label));
        }
    }
    if let Some(e) = last {
        let credential_focus = e.focus.as_deref().is_some_and(|f| credential_regex().is_match(f));
        if matches!(e.action, Action::Type { .. }) && (e.sensitive_focus || credential_focus) {
            evidence.insert(format!("typed:{}", e.focus.as_deref().unwrap_or("?")));
        }
    }
    PrivacyVerdict {
        sensitive: !evidence.is_empty(),
        evidence: evidence.into_iter().collect(),
    }
}

/// Every string that must never leave the device: text typed into
/// sensitive fields and credential-named slots of the instruction.
pub fn secrets(memory: &TrajectoryMemory) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = extract_slots(&memory.instruction)
        .into_iter()
        .filter(|(k, _)| credential_regex().is_match(k))
        .map(|(_, v)| v)
        .collect();
    for e in memory.entries() {
        let credential_focus = e.focus.as_deref().is_some_and(|f| credential_regex().is_match(f));
        if let Action::Type { text } = &e.action {
            if e.sensitive_focus || credential_focus {
                out.insert(text.clone());
            }
        }
    }
    out.retain(|s| !s.is_empty());
    out
}

pub fn redact(text: &str, secrets: &BTreeSet<String>) -> String {
    // longest first so a secret containing another is scrubbed whole
    let mut ordered: Vec<&String> = secrets.iter().collect();
    ordered.sort_by_key(|s| std::cmp::Reverse(s.len()));
    ordered.iter().fold(text.to_string(), |acc, s| acc.replace(s.as_str(), REDACTED))
}

/// Secrets found verbatim in any recorded cloud-bound payload.
pub fn taint_audit(cloud_requests: &[String], secrets: &BTreeSet<String>) -> Vec<String> {
    secrets
        .iter()
        .filter(|s| cloud_requests.iter().any(|r| r.contains(s.as_str())))
        .cloned()
        .collect()
}
