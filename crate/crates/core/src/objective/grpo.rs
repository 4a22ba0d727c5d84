use serde::{Deserialize, Serialize};

use super::{evaluate_batch, GroupBatch, ObjectiveOutput};
use crate::error::{validation, Error, Result};
use crate::policy::PolicyParams;

/// Below this population std a group carries no preference signal.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub group_mean: f64,
    pub group_std: f64,
}

/// `A_i = (r_i - mean) / std` with the population std; all zero when the
/// std is below [`STD_FLOOR`].
pub fn group_advantage(rewards: &[f64]) -> Result<AdvantageRecord> {
    if rewards.len() < 2 {
        return Err(validation(format!(
            "need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::Numeric(format!("reward {bad}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let advantages = if std < STD_FLOOR {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageRecord {
        rewards: rewards.to_vec(),
        advantages,
        group_mean: mean,
        group_std: std,
    })
}

/// `pi_theta / pi_old`, formed from the log difference.
pub fn importance_ratio(logp_theta: f64, logp_old: f64) -> Result<f64> {
    if !logp_theta.is_finite() || !logp_old.is_finite() {
        return Err(Error::Numeric(format!(
            "log-probs {logp_theta}, {logp_old}"
        )));
    }
    Ok((logp_theta - logp_old).exp())
}

/// `min(R * A, clip(R, 1 - eps, 1 + eps) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Per-token `r - ln r - 1` with `r = pi_ref / pi_theta`.
pub fn kl_token(logp_ref: f64, logp_theta: f64) -> f64 {
    let d = logp_ref - logp_theta;
    d.exp() - d - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub eps: f64,
    pub beta: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            eps: 0.2,
            beta: 0.04,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(validation(format!(
                "eps must lie in (0, 1), got {}",
                self.eps
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(validation(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// The clipped group-relative surrogate with the reference KL penalty,
/// averaged over the batch. Each batch entry's `weights` are its group
/// advantages. Returns the value and its gradient (to be ascended).
pub fn grpo_objective(
    batch: &[GroupBatch],
    params: &PolicyParams,
    cfg: &SurrogateConfig,
) -> Result<ObjectiveOutput> {
    evaluate_batch(batch, params, cfg, 0.0, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        let r = group_advantage(&[1.1, 0.1, 0.1, 1.1]).unwrap();
        for (a, e) in r.advantages.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!((r.group_mean - 0.6).abs() < 1e-15);
        assert!((r.group_std - 0.5).abs() < 1e-15);
        assert_eq!(group_advantage(&[0.3; 4]).unwrap().advantages, vec![0.0; 4]);
        assert_eq!(
            group_advantage(&[1.0, 0.0]).unwrap().advantages,
            vec![1.0, -1.0]
        );
        assert!(group_advantage(&[1.0]).is_err());
    }

    #[test]
    fn ratio_clip_kl_examples() {
        assert_eq!(importance_ratio(-1.3, -1.3).unwrap(), 1.0);
        assert!((importance_ratio(2f64.ln(), 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((importance_ratio(-(4f64.ln()), 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(importance_ratio(f64::NAN, 0.0).is_err());

        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_term(1.0, -0.7, 0.2), -0.7);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);

        assert_eq!(kl_token(-2.0, -2.0), 0.0);
        assert!((kl_token(2f64.ln(), 0.0) - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((kl_token(0.5f64.ln(), 0.0) - (0.5 + 2f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(SurrogateConfig::default().validate().is_ok());
        assert!(SurrogateConfig {
            eps: 1.0,
            beta: 0.0
        }
        .validate()
        .is_err());
        assert!(SurrogateConfig {
            eps: 0.2,
            beta: -1.0
        }
        .validate()
        .is_err());
    }
}
