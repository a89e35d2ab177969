//! Linear softmax over a masked discrete action set with sparse binary
//! features. Every decision is one "token", so log-probabilities are exact
//! and gradients are analytic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grpo::{grpo_objective, ClipConfig, GrpoError};
use crate::trajectory::TokenSample;

/// Separates feature ids from valid-action ids in an encoded prompt.
pub const PROMPT_SEPARATOR: u32 = u32::MAX;

/// One sampled decision: active features, the valid actions and the choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub features: Vec<u32>,
    pub valid: Vec<u32>,
    pub action: u32,
}

impl Decision {
    pub fn to_sample(&self, logprob: f64) -> TokenSample {
        let mut prompt_ids = self.features.clone();
        prompt_ids.push(PROMPT_SEPARATOR);
        prompt_ids.extend(&self.valid);
        TokenSample {
            prompt_ids,
            output_ids: vec![self.action],
            logprobs: vec![logprob],
        }
    }

    pub fn from_sample(sample: &TokenSample) -> Option<Decision> {
        let sep = sample.prompt_ids.iter().position(|&t| t == PROMPT_SEPARATOR)?;
        let action = *sample.output_ids.first()?;
        let valid = sample.prompt_ids[sep + 1..].to_vec();
        if sample.output_ids.len() != 1 || !valid.contains(&action) {
            return None;
        }
        Some(Decision {
            features: sample.prompt_ids[..sep].to_vec(),
            valid,
            action,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SoftmaxError {
    #[error("parameter shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("decision references feature {feature} or action {action} outside the model")]
    OutOfRange { feature: u32, action: u32 },
    #[error("no valid actions")]
    EmptyMask,
    #[error(transparent)]
    Objective(#[from] GrpoError),
}

/// Weights are stored feature-major: `w[f * actions + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub dim: usize,
    pub actions: usize,
    pub weights: Vec<f64>,
    /// Incremented on every applied update.
    pub version: u64,
}

/// Per-member inputs to the batched objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub decisions: Vec<Vec<Decision>>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    /// Mean objective over groups.
    pub objective: f64,
    pub grad: Vec<f64>,
    pub clip_fraction: f64,
    pub tokens: usize,
}

impl SoftmaxPolicy {
    pub fn zeros(dim: usize, actions: usize) -> Self {
        Self {
            dim,
            actions,
            weights: vec![0.0; dim * actions],
            version: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    fn check(&self, features: &[u32], valid: &[u32]) -> Result<(), SoftmaxError> {
        if valid.is_empty() {
            return Err(SoftmaxError::EmptyMask);
        }
        let bad_f = features.iter().find(|&&f| f as usize >= self.dim);
        let bad_a = valid.iter().find(|&&a| a as usize >= self.actions);
        if bad_f.is_some() || bad_a.is_some() {
            return Err(SoftmaxError::OutOfRange {
                feature: bad_f.copied().unwrap_or(0),
                action: bad_a.copied().unwrap_or(0),
            });
        }
        Ok(())
    }

    fn logit(&self, features: &[u32], action: u32) -> f64 {
        features
            .iter()
            .map(|&f| self.weights[f as usize * self.actions + action as usize])
            .sum()
    }

    /// Probabilities over `valid` (same order) at temperature `tau`.
    pub fn distribution(&self, features: &[u32], valid: &[u32], tau: f64) -> Result<Vec<f64>, SoftmaxError> {
        self.check(features, valid)?;
        assert!(tau > 0.0, "temperature must be positive");
        let z: Vec<f64> = valid.iter().map(|&a| self.logit(features, a) / tau).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / s).collect())
    }

    pub fn log_prob(&self, d: &Decision, tau: f64) -> Result<f64, SoftmaxError> {
        let p = self.distribution(&d.features, &d.valid, tau)?;
        let i = d.valid.iter().position(|&a| a == d.action).ok_or(SoftmaxError::OutOfRange {
            feature: 0,
            action: d.action,
        })?;
        Ok(p[i].ln())
    }

    /// Samples an action; `tau == 0` picks the first arg-max and reports
    /// its log-probability at temperature 1.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        features: &[u32],
        valid: &[u32],
        tau: f64,
        rng: &mut R,
    ) -> Result<(u32, f64), SoftmaxError> {
        if tau == 0.0 {
            let p = self.distribution(features, valid, 1.0)?;
            let (i, _) = p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            return Ok((valid[i], p[i].ln()));
        }
        let p = self.distribution(features, valid, tau)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Ok((valid[i], pi.ln()));
            }
        }
        let last = p.len() - 1;
        Ok((valid[last], p[last].ln()))
    }

    /// Adds `coeff * d log p(d.action) / dW` into `grad`.
    pub fn accumulate_grad_log_prob(&self, d: &Decision, tau: f64, coeff: f64, grad: &mut [f64]) -> Result<(), SoftmaxError> {
        if grad.len() != self.weights.len() {
            return Err(SoftmaxError::Shape {
                expected: self.weights.len(),
                got: grad.len(),
            });
        }
        let p = self.distribution(&d.features, &d.valid, tau)?;
        for &f in &d.features {
            let row = f as usize * self.actions;
            for (&a, &pa) in d.valid.iter().zip(&p) {
                let indicator = if a == d.action { 1.0 } else { 0.0 };
                grad[row + a as usize] += coeff * (indicator - pa) / tau;
            }
        }
        Ok(())
    }

    /// Clipped GRPO objective averaged over groups, with its exact gradient
    /// w.r.t. the weights.
    pub fn objective_gradient(&self, groups: &[GroupBatch], clip: &ClipConfig, tau: f64) -> Result<BatchGradient, SoftmaxError> {
        let mut grad = vec![0.0; self.weights.len()];
        let mut objective = 0.0;
        let mut clipped = 0.0;
        let mut tokens = 0;
        for g in groups {
            let new: Vec<Vec<f64>> = g
                .decisions
                .iter()
                .map(|m| m.iter().map(|d| self.log_prob(d, tau)).collect::<Result<_, _>>())
                .collect::<Result<_, _>>()?;
            let out = grpo_objective(&g.old_logprobs, &new, &g.advantages, clip)?;
            objective += out.value;
            clipped += out.clip_fraction * out.token_count as f64;
            tokens += out.token_count;
            for (member, coeffs) in g.decisions.iter().zip(&out.grad_new_logprobs) {
                for (d, &c) in member.iter().zip(coeffs) {
                    if c != 0.0 {
                        self.accumulate_grad_log_prob(d, tau, c, &mut grad)?;
                    }
                }
            }
        }
        let n = groups.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(BatchGradient {
            objective: objective / n,
            grad,
            clip_fraction: if tokens == 0 { 0.0 } else { clipped / tokens as f64 },
            tokens,
        })
    }

    /// Gradient ascent step; bumps the version.
    pub fn apply_update(&mut self, grad: &[f64], lr: f64) -> Result<u64, SoftmaxError> {
        if grad.len() != self.weights.len() {
            return Err(SoftmaxError::Shape {
                expected: self.weights.len(),
                got: grad.len(),
            });
        }
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w += lr * g;
        }
        self.version += 1;
        Ok(self.version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded(dim: usize, actions: usize, seed: u64) -> SoftmaxPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SoftmaxPolicy::zeros(dim, actions);
        p.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        p
    }

    #[test]
    fn distribution_respects_mask() {
        let p = seeded(4, 5, 1);
        let probs = p.distribution(&[0, 2], &[1, 3], 1.0).unwrap();
        assert_eq!(probs.len(), 2);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.distribution(&[0], &[], 1.0).is_err());
        assert!(p.distribution(&[9], &[0], 1.0).is_err());
    }

    #[test]
    fn grad_log_prob_matches_finite_difference() {
        let p = seeded(4, 5, 2);
        let d = Decision {
            features: vec![0, 3, 3],
            valid: vec![0, 2, 4],
            action: 2,
        };
        let mut g = vec![0.0; p.param_count()];
        p.accumulate_grad_log_prob(&d, 0.7, 1.0, &mut g).unwrap();
        let h = 1e-6;
        for i in 0..p.param_count() {
            let mut a = p.clone();
            a.weights[i] += h;
            let mut b = p.clone();
            b.weights[i] -= h;
            let fd = (a.log_prob(&d, 0.7).unwrap() - b.log_prob(&d, 0.7).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn sample_roundtrips_through_token_sample() {
        let p = seeded(4, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, lp) = p.sample(&[1, 2], &[0, 1, 4], 1.0, &mut rng).unwrap();
        let d = Decision {
            features: vec![1, 2],
            valid: vec![0, 1, 4],
            action: a,
        };
        let back = Decision::from_sample(&d.to_sample(lp)).unwrap();
        assert_eq!(back, d);
        assert!((p.log_prob(&back, 1.0).unwrap() - lp).abs() < 1e-12);
    }

    #[test]
    fn greedy_is_deterministic() {
        let p = seeded(4, 5, 4);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            p.sample(&[0], &[0, 1, 2, 3, 4], 0.0, &mut r1).unwrap(),
            p.sample(&[0], &[0, 1, 2, 3, 4], 0.0, &mut r2).unwrap()
        );
    }

    #[test]
    fn update_bumps_version_and_checks_shape() {
        let mut p = SoftmaxPolicy::zeros(2, 2);
        assert_eq!(p.apply_update(&[1.0; 4], 0.5).unwrap(), 1);
        assert_eq!(p.weights, vec![0.5; 4]);
        assert!(p.apply_update(&[1.0; 3], 0.5).is_err());
        assert_eq!(p.version, 1);
    }
}
