//! Pass@K difficulty strata and the progress-dependent task sampler.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    /// SR in [0, 0.25)
    Frontier,
    /// SR in [0.25, 0.5)
    Exploration,
    /// SR in [0.5, 0.75)
    NearMastery,
    /// SR in [0.75, 1]
    Exploitation,
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [
        Stratum::Frontier,
        Stratum::Exploration,
        Stratum::NearMastery,
        Stratum::Exploitation,
    ];

    /// Right-open bands: a rate sitting exactly on a boundary belongs to the
    /// easier (higher) stratum.
    pub fn from_success_rate(sr: f64) -> Self {
        if sr < 0.25 {
            Stratum::Frontier
        } else if sr < 0.5 {
            Stratum::Exploration
        } else if sr < 0.75 {
            Stratum::NearMastery
        } else {
            Stratum::Exploitation
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Frontier => "frontier",
            Stratum::Exploration => "exploration",
            Stratum::NearMastery => "near_mastery",
            Stratum::Exploitation => "exploitation",
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weight profiles are ordered frontier, exploration, near-mastery,
/// exploitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    #[serde(default = "default_easy")]
    pub early_profile: [f64; 4],
    #[serde(default = "default_hard")]
    pub late_profile: [f64; 4],
    /// Number of most recent attempts a task's pass rate is computed over.
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_easy() -> [f64; 4] {
    [0.1, 0.2, 0.3, 0.4]
}

fn default_hard() -> [f64; 4] {
    [0.4, 0.3, 0.2, 0.1]
}

fn default_k() -> usize {
    16
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            early_profile: default_easy(),
            late_profile: default_hard(),
            k: default_k(),
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("early_profile", &self.early_profile), ("late_profile", &self.late_profile)] {
            if p.iter().any(|w| !w.is_finite() || *w < 0.0) || p.iter().sum::<f64>() <= 0.0 {
                return Err(format!("{name} needs non-negative weights with a positive sum"));
            }
        }
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassWindow {
    recent: VecDeque<bool>,
    pub attempts: u64,
    pub successes: u64,
}

impl PassWindow {
    pub fn success_rate(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().filter(|&&s| s).count() as f64 / self.recent.len() as f64
        }
    }

    pub fn window_len(&self) -> usize {
        self.recent.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub config: CurriculumConfig,
    /// Training progress in [0, 1].
    pub progress: f64,
    pub tasks: BTreeMap<String, PassWindow>,
}

impl CurriculumState {
    pub fn new(config: CurriculumConfig, task_ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            config,
            progress: 0.0,
            tasks: task_ids.into_iter().map(|t| (t.into(), PassWindow::default())).collect(),
        }
    }

    pub fn set_progress(&mut self, progress: f64) {
        self.progress = progress.clamp(0.0, 1.0);
    }

    pub fn record(&mut self, task_id: &str, success: bool) {
        let k = self.config.k;
        let w = self.tasks.entry(task_id.to_string()).or_default();
        w.recent.push_back(success);
        while w.recent.len() > k {
            w.recent.pop_front();
        }
        w.attempts += 1;
        w.successes += u64::from(success);
    }

    pub fn success_rate(&self, task_id: &str) -> f64 {
        self.tasks.get(task_id).map_or(0.0, PassWindow::success_rate)
    }

    pub fn stratum(&self, task_id: &str) -> Stratum {
        Stratum::from_success_rate(self.success_rate(task_id))
    }

    /// Stratum weights at the current progress; sums to one.
    pub fn weights(&self) -> [f64; 4] {
        weights_at(&self.config, self.progress)
    }

    pub fn strata(&self) -> BTreeMap<Stratum, Vec<&str>> {
        let mut out: BTreeMap<Stratum, Vec<&str>> = BTreeMap::new();
        for (id, w) in &self.tasks {
            out.entry(Stratum::from_success_rate(w.success_rate())).or_default().push(id);
        }
        out
    }

    /// Share of tasks per stratum, for metrics.
    pub fn stratum_mix(&self) -> [f64; 4] {
        let mut mix = [0.0; 4];
        if self.tasks.is_empty() {
            return mix;
        }
        for w in self.tasks.values() {
            mix[Stratum::from_success_rate(w.success_rate()).index()] += 1.0;
        }
        let n = self.tasks.len() as f64;
        mix.map(|c| c / n)
    }

    /// Draws `n` task ids: a stratum by weight (renormalized over non-empty
    /// strata), then a task uniformly within it.
    pub fn sample_tasks<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<String>, GrpoError> {
        if self.tasks.is_empty() {
            return Err(GrpoError::EmptyTaskSet);
        }
        let strata = self.strata();
        let weights = self.weights();
        let live: Vec<(Stratum, f64)> = strata.keys().map(|s| (*s, weights[s.index()])).collect();
        let mut total: f64 = live.iter().map(|(_, w)| w).sum();
        // Populated strata may all carry zero weight; fall back to uniform.
        let uniform = total <= 0.0;
        if uniform {
            total = live.len() as f64;
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = live[live.len() - 1].0;
            for &(s, w) in &live {
                let w = if uniform { 1.0 } else { w };
                if u < w {
                    chosen = s;
                    break;
                }
                u -= w;
            }
            let members = &strata[&chosen];
            out.push(members[rng.random_range(0..members.len())].to_string());
        }
        Ok(out)
    }
}

/// Linear interpolation between the two profiles, normalized.
pub fn weights_at(config: &CurriculumConfig, progress: f64) -> [f64; 4] {
    let p = progress.clamp(0.0, 1.0);
    let raw: [f64; 4] = std::array::from_fn(|i| (1.0 - p) * config.early_profile[i] + p * config.late_profile[i]);
    let sum: f64 = raw.iter().sum();
    raw.map(|w| w / sum)
}
