use serde::{Deserialize, Serialize};

use super::GrpoError;

pub const DEFAULT_STD_EPS: f64 = 1e-6;

/// Per-trajectory normalized advantages; every token of trajectory `i`
/// shares `values[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub values: Vec<f64>,
}

impl AdvantageSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn token(&self, member: usize, _t: usize) -> f64 {
        self.values[member]
    }

    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&a| a == 0.0)
    }
}

/// `(R_i - mean) / std` with the population standard deviation. Groups whose
/// std does not exceed `eps` get all-zero advantages.
pub fn compute_advantages(rewards: &[f64], eps: f64) -> Result<AdvantageSet, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if let Some(&bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward(bad));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let values = if std <= eps {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageSet { values })
}
