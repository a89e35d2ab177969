//! Token-level clipped surrogate with asymmetric clipping and no KL term.
//!
//! ```text
//! J = 1/sum_c |o_c| * sum_i sum_t min(r_it * A_i, clip(r_it, 1 - eps_low, 1 + eps_high) * A_i)
//! r_it = exp(logp_new - logp_old)
//! ```

use serde::{Deserialize, Serialize};

use super::GrpoError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    /// Always zero: the objective carries no KL penalty.
    #[serde(default)]
    pub kl_coefficient: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.3,
            kl_coefficient: 0.0,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.eps_low > 0.0 && self.eps_low <= self.eps_high) {
            return Err(GrpoError::InvalidClip(format!(
                "need 0 < eps_low <= eps_high, got {} / {}",
                self.eps_low, self.eps_high
            )));
        }
        if self.kl_coefficient != 0.0 {
            return Err(GrpoError::InvalidClip("KL-regularized objectives are not supported".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOutput {
    /// Objective to maximize.
    pub value: f64,
    /// dJ / d logp_new for every token, shaped like the inputs.
    pub grad_new_logprobs: Vec<Vec<f64>>,
    /// Share of tokens whose clipped branch is active (zero gradient, A != 0).
    pub clip_fraction: f64,
    pub token_count: usize,
}

/// Per-token surrogate term and its derivative w.r.t. the new log-prob.
fn token_term(ratio: f64, adv: f64, clip: &ClipConfig) -> (f64, f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip.eps_low, 1.0 + clip.eps_high) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped, false)
    } else {
        (clipped, 0.0, adv != 0.0)
    }
}

pub fn grpo_objective(
    old_logprobs: &[Vec<f64>],
    new_logprobs: &[Vec<f64>],
    advantages: &[f64],
    clip: &ClipConfig,
) -> Result<ObjectiveOutput, GrpoError> {
    clip.validate()?;
    if old_logprobs.len() != new_logprobs.len() || old_logprobs.len() != advantages.len() {
        return Err(GrpoError::ShapeMismatch(format!(
            "{} old sequences, {} new sequences, {} advantages",
            old_logprobs.len(),
            new_logprobs.len(),
            advantages.len()
        )));
    }
    for (i, (o, n)) in old_logprobs.iter().zip(new_logprobs).enumerate() {
        if o.len() != n.len() {
            return Err(GrpoError::ShapeMismatch(format!(
                "member {i}: {} old tokens vs {} new tokens",
                o.len(),
                n.len()
            )));
        }
    }
    let token_count: usize = old_logprobs.iter().map(Vec::len).sum();
    if token_count == 0 {
        return Ok(ObjectiveOutput {
            value: 0.0,
            grad_new_logprobs: new_logprobs.iter().map(|_| Vec::new()).collect(),
            clip_fraction: 0.0,
            token_count: 0,
        });
    }
    let norm = token_count as f64;
    let mut total = 0.0;
    let mut clipped_tokens = 0usize;
    let grads = old_logprobs
        .iter()
        .zip(new_logprobs)
        .zip(advantages)
        .map(|((old, new), &adv)| {
            old.iter()
                .zip(new)
                .map(|(&lo, &ln)| {
                    let (term, grad, clipped) = token_term((ln - lo).exp(), adv, clip);
                    total += term;
                    clipped_tokens += usize::from(clipped);
                    grad / norm
                })
                .collect()
        })
        .collect();
    Ok(ObjectiveOutput {
        value: total / norm,
        grad_new_logprobs: grads,
        clip_fraction: clipped_tokens as f64 / norm,
        token_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(ratio: f64, adv: f64) -> ObjectiveOutput {
        grpo_objective(&[vec![0.0]], &[vec![ratio.ln()]], &[adv], &ClipConfig::default()).unwrap()
    }

    #[test]
    fn upper_clip_with_positive_advantage() {
        let out = single(1.5, 1.0);
        assert!((out.value - 1.3).abs() < 1e-12);
        assert_eq!(out.grad_new_logprobs[0][0], 0.0);
        assert_eq!(out.clip_fraction, 1.0);
    }

    #[test]
    fn lower_clip_with_negative_advantage() {
        let out = single(0.5, -1.0);
        assert!((out.value + 0.8).abs() < 1e-12);
        assert_eq!(out.grad_new_logprobs[0][0], 0.0);
    }

    #[test]
    fn identity_ratio_is_mean_advantage() {
        let old = vec![vec![-1.0, -2.0], vec![-0.5, -0.1, -0.3]];
        let out = grpo_objective(&old, &old, &[1.0, -1.0], &ClipConfig::default()).unwrap();
        assert!((out.value - (2.0 - 3.0) / 5.0).abs() < 1e-12);
        assert_eq!(out.grad_new_logprobs[0], vec![0.2, 0.2]);
        assert_eq!(out.clip_fraction, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let err = grpo_objective(&[vec![0.0]], &[vec![0.0, 1.0]], &[1.0], &ClipConfig::default());
        assert!(matches!(err, Err(GrpoError::ShapeMismatch(_))));
        let err = grpo_objective(&[vec![0.0]], &[vec![0.0]], &[1.0, 2.0], &ClipConfig::default());
        assert!(matches!(err, Err(GrpoError::ShapeMismatch(_))));
    }

    #[test]
    fn invalid_clip() {
        let bad = ClipConfig {
            eps_low: 0.4,
            eps_high: 0.3,
            kl_coefficient: 0.0,
        };
        assert!(bad.validate().is_err());
        assert!(ClipConfig::default().validate().is_ok());
    }
}
