use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Verdict;

/// Backend records of the simulated apps, keyed like `contact:Alice Chen`.
pub type Records = BTreeMap<String, String>;

/// Key under which the agent's `answer` text is stored.
pub const ANSWER_KEY: &str = "answer";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    RecordEquals { key: String, value: String },
    RecordPresent { key: String },
    RecordAbsent { key: String },
    /// Case-insensitive, whitespace-trimmed match on the submitted answer.
    AnswerEquals { value: String },
}

impl Rule {
    /// `None` when the rule holds, otherwise a description naming the field.
    fn violation(&self, records: &Records) -> Option<String> {
        match self {
            Rule::RecordEquals { key, value } => match records.get(key) {
                Some(found) if found == value => None,
                Some(found) => Some(format!("field `{key}`: expected `{value}`, found `{found}`")),
                None => Some(format!("field `{key}`: expected `{value}`, found nothing")),
            },
            Rule::RecordPresent { key } => (!records.contains_key(key)).then(|| format!("field `{key}` is missing")),
            Rule::RecordAbsent { key } => records
                .contains_key(key)
                .then(|| format!("field `{key}` should not exist")),
            Rule::AnswerEquals { value } => {
                let got = records.get(ANSWER_KEY).map(|s| s.trim().to_lowercase());
                if got.as_deref() == Some(value.trim().to_lowercase().as_str()) {
                    None
                } else {
                    Some(format!(
                        "field `{ANSWER_KEY}`: expected `{value}`, found `{}`",
                        records.get(ANSWER_KEY).map(String::as_str).unwrap_or("")
                    ))
                }
            }
        }
    }
}

/// A conjunction of rules over the final backend state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleVerifier {
    pub rules: Vec<Rule>,
}

impl RuleVerifier {
    pub fn check(&self, records: &Records) -> Verdict {
        let failures: Vec<String> = self.rules.iter().filter_map(|r| r.violation(records)).collect();
        if failures.is_empty() {
            Verdict::rule(true, "all rules satisfied")
        } else {
            Verdict::rule(false, failures.join("; "))
        }
    }
}
