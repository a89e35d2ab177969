//! Action-level repetition penalty.
//!
//! A penalized span is a maximal run in which a primitive block of `L`
//! actions (`1 <= L <= 5`) repeats back-to-back at least `min_repeats`
//! times. Actions must match in kind *and* parameters, so two clicks at
//! different points never form a cycle. Candidate spans are resolved
//! greedily left-to-right, trying the longest enabled cycle length first.

use serde::{Deserialize, Serialize};

use crate::action::Action;

pub const MAX_CYCLE_LENGTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionConfig {
    /// Penalty weight per redundant repetition.
    pub lambda: f64,
    /// Minimum number of back-to-back block occurrences that count as a loop.
    pub min_repeats: usize,
    /// Enabled cycle lengths, each in `1..=5`.
    pub cycle_lengths: Vec<usize>,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.25,
            min_repeats: 3,
            cycle_lengths: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionSpan {
    pub start: usize,
    pub cycle_length: usize,
    pub repetitions: usize,
}

impl RepetitionSpan {
    pub fn end(&self) -> usize {
        self.start + self.cycle_length * self.repetitions
    }

    /// Occurrences beyond the `min_repeats - 1` that are tolerated.
    pub fn redundant(&self, min_repeats: usize) -> usize {
        self.repetitions + 1 - min_repeats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub penalized_spans: Vec<RepetitionSpan>,
    /// Non-positive.
    pub penalty: f64,
}

fn is_primitive(block: &[Action]) -> bool {
    let n = block.len();
    (1..n).filter(|d| n.is_multiple_of(*d)).all(|d| block.chunks(d).any(|c| c != &block[..d]))
}

fn repeats_at(actions: &[Action], start: usize, len: usize) -> usize {
    let block = &actions[start..start + len];
    actions[start..].chunks_exact(len).take_while(|c| *c == block).count()
}

pub fn detect_repetition(actions: &[Action], cfg: &RepetitionConfig) -> RepetitionReport {
    assert!(cfg.lambda >= 0.0, "penalty weight must be non-negative");
    assert!(cfg.min_repeats >= 2, "a loop needs at least two occurrences");
    let mut lengths: Vec<usize> = cfg
        .cycle_lengths
        .iter()
        .copied()
        .filter(|l| (1..=MAX_CYCLE_LENGTH).contains(l))
        .collect();
    lengths.sort_unstable_by(|a, b| b.cmp(a));
    lengths.dedup();

    let mut spans = Vec::new();
    let mut i = 0;
    while i < actions.len() {
        let found = lengths.iter().find_map(|&len| {
            if i + len * cfg.min_repeats > actions.len() || !is_primitive(&actions[i..i + len]) {
                return None;
            }
            let reps = repeats_at(actions, i, len);
            (reps >= cfg.min_repeats).then_some(RepetitionSpan {
                start: i,
                cycle_length: len,
                repetitions: reps,
            })
        });
        match found {
            Some(span) => {
                i = span.end();
                spans.push(span);
            }
            None => i += 1,
        }
    }
    let redundant: usize = spans.iter().map(|s| s.redundant(cfg.min_repeats)).sum();
    RepetitionReport {
        penalized_spans: spans,
        penalty: -(cfg.lambda * redundant as f64),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force window enumerator: at each greedy cursor it lists every
    /// (length, repetitions) window by direct elementwise comparison and
    /// keeps the longest enabled primitive cycle with the most repetitions.
    pub(crate) fn brute_force(actions: &[Action], cfg: &RepetitionConfig) -> (Vec<RepetitionSpan>, f64) {
        let n = actions.len();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < n {
            let mut windows = Vec::new();
            for len in 1..=MAX_CYCLE_LENGTH {
                if !cfg.cycle_lengths.contains(&len) || i + len > n {
                    continue;
                }
                // power of a shorter word?
                let mut primitive = true;
                for d in 1..len {
                    if len % d == 0 && (0..len).all(|j| actions[i + j] == actions[i + j % d]) {
                        primitive = false;
                    }
                }
                if !primitive {
                    continue;
                }
                for reps in 1..=(n - i) / len {
                    if (0..reps * len).all(|j| actions[i + j] == actions[i + j % len]) {
                        windows.push((len, reps));
                    }
                }
            }
            let best = windows
                .iter()
                .filter(|(_, r)| *r >= cfg.min_repeats)
                .max_by_key(|(len, reps)| (*len, *reps));
            match best {
                Some(&(len, reps)) => {
                    spans.push(RepetitionSpan {
                        start: i,
                        cycle_length: len,
                        repetitions: reps,
                    });
                    i += len * reps;
                }
                None => i += 1,
            }
        }
        let redundant: usize = spans.iter().map(|s| s.repetitions + 1 - cfg.min_repeats).sum();
        (spans, -(cfg.lambda * redundant as f64))
    }

    #[test]
    fn four_identical_clicks() {
        let acts = vec![Action::click(1, 2); 4];
        let r = detect_repetition(&acts, &RepetitionConfig::default());
        assert_eq!(
            r.penalized_spans,
            vec![RepetitionSpan {
                start: 0,
                cycle_length: 1,
                repetitions: 4
            }]
        );
        assert_eq!(r.penalty, -0.5);
    }

    #[test]
    fn two_cycle_repeated_twice_is_below_threshold() {
        let acts = vec![
            Action::type_text("a"),
            Action::type_text("b"),
            Action::type_text("a"),
            Action::type_text("b"),
        ];
        let r = detect_repetition(&acts, &RepetitionConfig::default());
        assert!(r.penalized_spans.is_empty());
        assert_eq!(r.penalty, 0.0);
    }

    #[test]
    fn scattered_repeat_is_not_a_run() {
        let acts = vec![Action::click(1, 2), Action::click(9, 9), Action::click(1, 2)];
        assert_eq!(detect_repetition(&acts, &RepetitionConfig::default()).penalty, 0.0);
    }

    #[test]
    fn same_kind_different_params_is_exempt() {
        let acts: Vec<Action> = (0..10).map(|i| Action::click(i, 0)).collect();
        assert_eq!(detect_repetition(&acts, &RepetitionConfig::default()).penalty, 0.0);
    }

    #[test]
    fn non_primitive_blocks_fall_back_to_the_short_cycle() {
        let acts = vec![Action::Wait; 10];
        let r = detect_repetition(&acts, &RepetitionConfig::default());
        assert_eq!(r.penalized_spans[0].cycle_length, 1);
        assert_eq!(r.penalized_spans[0].repetitions, 10);
    }

    #[test]
    fn cycle_mask_disables_lengths() {
        let a = Action::click(1, 1);
        let b = Action::click(2, 2);
        let acts = vec![a.clone(), b.clone(), a.clone(), b.clone(), a, b];
        let on = detect_repetition(&acts, &RepetitionConfig::default());
        assert_eq!(on.penalized_spans.len(), 1);
        let cfg = RepetitionConfig {
            cycle_lengths: vec![1, 3, 4, 5],
            ..Default::default()
        };
        assert!(detect_repetition(&acts, &cfg).penalized_spans.is_empty());
    }

    pub(crate) fn small_alphabet() -> impl Strategy<Value = Action> {
        prop_oneof![
            Just(Action::click(1, 1)),
            Just(Action::click(1, 2)),
            Just(Action::type_text("a")),
            Just(Action::type_text("b")),
            Just(Action::Wait),
        ]
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(acts in proptest::collection::vec(small_alphabet(), 0..40)) {
            let cfg = RepetitionConfig::default();
            let r = detect_repetition(&acts, &cfg);
            let (spans, penalty) = brute_force(&acts, &cfg);
            prop_assert_eq!(r.penalized_spans, spans);
            prop_assert_eq!(r.penalty, penalty);
            prop_assert!(r.penalty <= 0.0);
        }
    }
}
