//! Rule-based trajectory monitor. Looks at the most recent entries and
//! reports whether execution still looks aligned with the instruction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::memory::{MemoryEntry, TrajectoryMemory};
use crate::action::{serialize_action, Action};
use crate::task::extract_slots;
use crate::trajectory::EnvStatus;
use crate::verify::{detect_repetition, RepetitionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    ActionFailed,
    RepetitionNoProgress,
    IncorrectInput,
    TaskDeviation,
}

impl Signal {
    pub fn as_str(self) -> &'static str {
        match self {
            Signal::ActionFailed => "action_failed",
            Signal::RepetitionNoProgress => "repetition_no_progress",
            Signal::IncorrectInput => "incorrect_input",
            Signal::TaskDeviation => "task_deviation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub aligned: bool,
    /// Present iff not aligned.
    pub error_summary: Option<String>,
    pub signals: BTreeSet<Signal>,
}

impl MonitorVerdict {
    pub fn aligned() -> Self {
        Self {
            aligned: true,
            error_summary: None,
            signals: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Number of most recent entries inspected.
    pub window: usize,
    /// Total steps after which the run counts as deviating.
    pub deviation_budget: usize,
    pub repetition: RepetitionConfig,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: 6,
            deviation_budget: 20,
            repetition: RepetitionConfig::default(),
        }
    }
}

struct Finding {
    signal: Signal,
    first: usize,
    last: usize,
    action: Action,
}

/// A repetition span counts as no-progress when the observation at
/// `min_repeats` consecutive block boundaries is unchanged.
fn no_progress(window: &[MemoryEntry], cfg: &RepetitionConfig) -> Option<Finding> {
    let actions: Vec<Action> = window.iter().map(|e| e.action.clone()).collect();
    let report = detect_repetition(&actions, cfg);
    report.penalized_spans.iter().find_map(|span| {
        let boundary = |k: usize| {
            let i = span.start + k * span.cycle_length;
            match window.get(i) {
                Some(e) if k < span.repetitions => &e.observation,
                _ => &window[span.end() - 1].result,
            }
        };
        let mut run = 1;
        for k in 1..=span.repetitions {
            run = if boundary(k) == boundary(k - 1) { run + 1 } else { 1 };
            if run >= cfg.min_repeats {
                return Some(Finding {
                    signal: Signal::RepetitionNoProgress,
                    first: window[span.start].step,
                    last: window[span.end() - 1].step,
                    action: window[span.start].action.clone(),
                });
            }
        }
        None
    })
}

fn incorrect_input(window: &[MemoryEntry], slots: &BTreeMap<String, String>) -> Option<Finding> {
    window.iter().find_map(|e| {
        let (Action::Type { text }, Some(field)) = (&e.action, &e.focus) else {
            return None;
        };
        let expected = slots.get(field)?;
        (expected != text).then(|| Finding {
            signal: Signal::IncorrectInput,
            first: e.step,
            last: e.step,
            action: e.action.clone(),
        })
    })
}

pub fn monitor_check(memory: &TrajectoryMemory, cfg: &MonitorConfig) -> MonitorVerdict {
    assert!(cfg.window >= 1, "monitor window must be at least 1");
    let entries = memory.entries();
    let window = &entries[entries.len().saturating_sub(cfg.window)..];
    let slots = extract_slots(&memory.instruction);

    let mut findings = Vec::new();
    if let Some(e) = window.iter().find(|e| e.env_status == EnvStatus::ActionFailed) {
        findings.push(Finding {
            signal: Signal::ActionFailed,
            first: e.step,
            last: e.step,
            action: e.action.clone(),
        });
    }
    findings.extend(no_progress(window, &cfg.repetition));
    findings.extend(incorrect_input(window, &slots));
    if entries.len() > cfg.deviation_budget {
        let last = &entries[entries.len() - 1];
        findings.push(Finding {
            signal: Signal::TaskDeviation,
            first: cfg.deviation_budget,
            last: last.step,
            action: last.action.clone(),
        });
    }
    if findings.is_empty() {
        return MonitorVerdict::aligned();
    }
    let summary = findings
        .iter()
        .map(|f| {
            format!(
                "{} at steps {}-{}: offending action {}",
                f.signal.as_str(),
                f.first,
                f.last,
                serialize_action(&f.action)
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    MonitorVerdict {
        aligned: false,
        error_summary: Some(summary),
        signals: findings.iter().map(|f| f.signal).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collab::memory::tests::entry;

    fn memory(entries: Vec<MemoryEntry>) -> TrajectoryMemory {
        let mut m = TrajectoryMemory::new("t", r#"Create a contact with phone "555-0199"."#);
        entries.into_iter().for_each(|e| m.record(e));
        m
    }

    #[test]
    fn identical_clicks_on_a_frozen_screen() {
        let mut es: Vec<MemoryEntry> = (0..3).map(|i| entry(i, Action::click(1, 1))).collect();
        for e in &mut es {
            e.observation = "same".into();
            e.result = "same".into();
        }
        let v = monitor_check(&memory(es), &MonitorConfig::default());
        assert!(!v.aligned);
        assert_eq!(v.signals, BTreeSet::from([Signal::RepetitionNoProgress]));
        assert!(v.error_summary.unwrap().contains("steps 0-2"));
    }

    #[test]
    fn repeated_clicks_that_change_the_screen_are_progress() {
        let es: Vec<MemoryEntry> = (0..3).map(|i| entry(i, Action::click(1, 1))).collect();
        assert!(monitor_check(&memory(es), &MonitorConfig::default()).aligned);
    }

    #[test]
    fn clean_window_is_aligned() {
        let es = vec![entry(0, Action::click(1, 1)), entry(1, Action::back())];
        let v = monitor_check(&memory(es), &MonitorConfig::default());
        assert_eq!(v, MonitorVerdict::aligned());
    }

    #[test]
    fn wrong_typed_slot_and_failures() {
        let mut typed = entry(0, Action::type_text("555-0100"));
        typed.focus = Some("phone".into());
        let mut failed = entry(1, Action::click(9, 9));
        failed.env_status = EnvStatus::ActionFailed;
        let v = monitor_check(&memory(vec![typed, failed]), &MonitorConfig::default());
        assert_eq!(v.signals, BTreeSet::from([Signal::IncorrectInput, Signal::ActionFailed]));
        let s = v.error_summary.unwrap();
        assert!(s.contains("555-0100") && s.contains("incorrect_input"));
    }

    #[test]
    fn budget_overrun_is_deviation() {
        let es: Vec<MemoryEntry> = (0..5).map(|i| entry(i, Action::click(i as u32, 0))).collect();
        let cfg = MonitorConfig {
            deviation_budget: 4,
            ..Default::default()
        };
        assert_eq!(monitor_check(&memory(es), &cfg).signals, BTreeSet::from([Signal::TaskDeviation]));
    }
}
