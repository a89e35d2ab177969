//! Synthetic user: answers `ask_user` questions from the task's hidden
//! context, one detail per key the question mentions.

use std::collections::BTreeMap;

pub const NOTHING_TO_ADD: &str = "I have nothing to add.";
pub const ASK_SPECIFIC: &str = "Could you ask about a specific detail?";

fn mentions(question: &str, key: &str) -> bool {
    let q = question.to_lowercase();
    let k = key.to_lowercase();
    q.contains(&k) || q.contains(&k.replace('_', " "))
}

pub fn user_reply(hidden: Option<&BTreeMap<String, String>>, question: &str) -> String {
    let Some(hidden) = hidden.filter(|h| !h.is_empty()) else {
        return NOTHING_TO_ADD.to_string();
    };
    let parts: Vec<String> = hidden
        .iter()
        .filter(|(k, _)| mentions(question, k))
        .map(|(k, v)| format!("The {k} is \"{v}\"."))
        .collect();
    if parts.is_empty() {
        ASK_SPECIFIC.to_string()
    } else {
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::extract_slots;

    #[test]
    fn replies_with_the_asked_detail() {
        let hidden: BTreeMap<String, String> = [("recipient".to_string(), "Bob Stone".to_string())].into();
        let reply = user_reply(Some(&hidden), "Which recipient?");
        assert!(reply.contains("Bob Stone"));
        assert_eq!(extract_slots(&reply)["recipient"], "Bob Stone");
        assert_eq!(user_reply(Some(&hidden), "hello?"), ASK_SPECIFIC);
        assert_eq!(user_reply(None, "Which recipient?"), NOTHING_TO_ADD);
    }
}
