//! Surrogate objectives. Both are evaluated per group on its own tape and
//! summed in group order, so the result does not depend on how the groups
//! are scheduled across threads.

pub mod gcpo;
pub mod grpo;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, Tape, Tensor};
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, TapeModel};
use crate::rollout::Group;

pub use gcpo::{
    causal_advantage, causal_ref_prob, compute_causal, gcpo_objective, kl_causal, phi_token_prob,
    rep_collider, rep_conditional, rep_query_baseline, similarity, upsilon, CausalComponents,
    CausalConfig, CausalRefTokens, CausalReps, CausalWeights, Metric, PhiSumMode, PROB_FLOOR,
};
pub use grpo::{
    clipped_term, group_advantage, grpo_objective, importance_ratio, kl_token, AdvantageRecord,
    SurrogateConfig, STD_FLOOR,
};

/// Inputs of the causal KL term for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalKlInputs {
    /// Per response `i`: the leave-one-out prompt `x_i SEP`.
    pub prompts: Vec<Vec<u32>>,
    /// Per response and token: the clamped causal reference probability.
    pub ref_probs: Vec<Vec<f64>>,
}

/// One group, ready for objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub q: Vec<u32>,
    pub responses: Vec<Vec<u32>>,
    pub old_logps: Vec<Vec<f64>>,
    pub ref_logps: Vec<Vec<f64>>,
    /// `A_i` for the plain surrogate, `B_i` for the causal one.
    pub weights: Vec<f64>,
    pub causal: Option<CausalKlInputs>,
}

impl GroupBatch {
    pub fn from_group(group: &Group, ref_logps: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        Self {
            q: group.q.ids.clone(),
            responses: group.responses.iter().map(|r| r.ids.clone()).collect(),
            old_logps: group.old_logps.clone(),
            ref_logps,
            weights,
            causal: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.responses.len();
        if n == 0 {
            return Err(Error::State("group has no responses".into()));
        }
        if self.old_logps.len() != n || self.ref_logps.len() != n || self.weights.len() != n {
            return Err(Error::State(format!(
                "group of {n} responses has {} old, {} reference log-prob rows and {} weights",
                self.old_logps.len(),
                self.ref_logps.len(),
                self.weights.len()
            )));
        }
        for (i, y) in self.responses.iter().enumerate() {
            if y.is_empty() {
                return Err(Error::State(format!("response {i} is empty")));
            }
            if self.old_logps[i].len() != y.len() || self.ref_logps[i].len() != y.len() {
                return Err(Error::State(format!(
                    "log-prob length mismatch for response {i}"
                )));
            }
        }
        if let Some(c) = &self.causal {
            if c.prompts.len() != n || c.ref_probs.len() != n {
                return Err(Error::State(
                    "causal inputs do not cover every response".into(),
                ));
            }
            for (i, y) in self.responses.iter().enumerate() {
                if c.ref_probs[i].len() != y.len() {
                    return Err(Error::State(format!(
                        "causal reference length mismatch for response {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveStats {
    pub tokens: usize,
    /// Fraction of tokens whose ratio lies outside `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
    /// Sequence-normalised reference KL, averaged over groups.
    pub mean_kl_ref: f64,
    /// Causal KL, averaged over groups; present when causal inputs were given.
    pub mean_kl_causal: Option<f64>,
    /// Smallest per-group causal KL seen.
    pub min_kl_causal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub value: f64,
    /// Gradient of `value` with respect to the parameters.
    pub grad: Vec<f64>,
    pub stats: ObjectiveStats,
}

struct GroupResult {
    value: f64,
    grad: Vec<f64>,
    tokens: usize,
    clipped: usize,
    kl_ref: f64,
    kl_causal: Option<f64>,
}

/// `sum_i w_i (1 / T_i) sum_j k3(ref_j, lp_j)` on the tape, with `k3` the
/// per-token `r - ln r - 1`.
fn k3_column(tape: &mut Tape<'_>, reference: Vec<f64>, lp: Tensor) -> Tensor {
    let t = reference.len();
    let r = tape.column(reference);
    let diff = tape.sub(r, lp);
    let e = tape.exp(diff);
    let ones = tape.column(vec![1.0; t]);
    let k = tape.sub(e, diff);
    tape.sub(k, ones)
}

fn group_objective(
    g: &GroupBatch,
    params: &PolicyParams,
    cfg: &SurrogateConfig,
    kappa: f64,
    batch_scale: f64,
) -> Result<GroupResult> {
    let n = g.responses.len();
    let mut tokens = 0;
    let mut clipped = 0;
    let mut kl_ref = 0.0;
    let mut kl_causal = None;
    let (value, grad) = grad(&params.values, |tape| {
        let model = TapeModel::bind(params, tape);
        let mut total = tape.scalar(0.0);
        for (i, y) in g.responses.iter().enumerate() {
            let t = y.len();
            let w = batch_scale / (n as f64 * t as f64);
            let lp = model.token_logps(tape, &g.q, y)?;
            let old = tape.column(g.old_logps[i].clone());
            let log_ratio = tape.sub(lp, old);
            let ratio = tape.exp(log_ratio);
            let clip = tape.clamp(ratio, 1.0 - cfg.eps, 1.0 + cfg.eps);
            let adv = tape.column(vec![g.weights[i]; t]);
            let raw = tape.mul(ratio, adv);
            let cut = tape.mul(clip, adv);
            let surrogate = tape.min(raw, cut);
            let kl = k3_column(tape, g.ref_logps[i].clone(), lp);
            let penalty = tape.scale(kl, cfg.beta);
            let term = tape.sub(surrogate, penalty);
            let s = tape.weighted_sum(term, &vec![w; t]);
            total = tape.add(total, s);

            tokens += t;
            clipped += tape
                .value(ratio)
                .iter()
                .filter(|r| **r < 1.0 - cfg.eps || **r > 1.0 + cfg.eps)
                .count();
            kl_ref += tape.value(kl).iter().sum::<f64>() / (n * t) as f64;
        }
        if let Some(c) = &g.causal {
            let mut kc = tape.scalar(0.0);
            for (i, y) in g.responses.iter().enumerate() {
                let t = y.len();
                let lp = model.token_logps(tape, &c.prompts[i], y)?;
                let reference = c.ref_probs[i].iter().map(|p| p.ln()).collect();
                let kl = k3_column(tape, reference, lp);
                let s = tape.weighted_sum(kl, &vec![1.0 / (n * t) as f64; t]);
                kc = tape.add(kc, s);
            }
            kl_causal = Some(tape.scalar_value(kc));
            if kappa != 0.0 {
                let pen = tape.scale(kc, -kappa * batch_scale);
                total = tape.add(total, pen);
            }
        }
        Ok(total)
    })?;
    Ok(GroupResult {
        value,
        grad,
        tokens,
        clipped,
        kl_ref,
        kl_causal,
    })
}

/// Shared evaluation behind both objectives.
pub(crate) fn evaluate_batch(
    batch: &[GroupBatch],
    params: &PolicyParams,
    cfg: &SurrogateConfig,
    kappa: f64,
    require_causal: bool,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::State("empty batch".into()));
    }
    for g in batch {
        g.validate()?;
        if require_causal && g.causal.is_none() {
            return Err(Error::State("causal components missing for a group".into()));
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let results = batch
        .par_iter()
        .map(|g| group_objective(g, params, cfg, kappa, scale))
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; params.len()];
    let mut stats = ObjectiveStats::default();
    let (mut clipped, mut kl_ref) = (0usize, 0.0);
    let mut causal: Vec<f64> = Vec::new();
    for r in &results {
        value += r.value;
        grad.iter_mut().zip(&r.grad).for_each(|(a, b)| *a += b);
        stats.tokens += r.tokens;
        clipped += r.clipped;
        kl_ref += r.kl_ref;
        causal.extend(r.kl_causal);
    }
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("objective or gradient is not finite".into()));
    }
    stats.clip_fraction = clipped as f64 / stats.tokens as f64;
    stats.mean_kl_ref = kl_ref * scale;
    if !causal.is_empty() {
        stats.mean_kl_causal = Some(causal.iter().sum::<f64>() / causal.len() as f64);
        stats.min_kl_causal = causal.iter().copied().reduce(f64::min);
    }
    Ok(ObjectiveOutput { value, grad, stats })
}
