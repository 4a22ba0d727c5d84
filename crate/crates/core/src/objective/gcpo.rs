//! Causal extension of the group surrogate.
//!
//! Each response `y_i` gets a weight `Υ_i = α · s(z_i, Z̄_i − Z̄′_i + z̄)` where
//! `z_i` is its hidden state, `z̄` the group mean, `Z̄_i` the mean state of
//! samples drawn in place of `y_i` given the other responses and the
//! collider output, and `Z̄′_i` the same averaged over collider variants.
//! The advantage becomes `B_i = A_i · Υ_i`, and a second KL term pulls the
//! leave-one-out conditional towards a projected per-token reference.
//! Everything here is computed under the frozen sampling snapshot and
//! enters the objective as a constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    evaluate_batch, kl_token, CausalKlInputs, GroupBatch, ObjectiveOutput, SurrogateConfig,
};
use crate::error::{validation, Error, Result};
use crate::policy::{sample_branches, Decoding, PolicyParams, PolicySnapshot};
use crate::rng::derive_seed;
use crate::rollout::{
    build_x_ij, expected_aux_generations, sample_collider_outputs, ColliderSet, GenerationCounter,
    Group, LooContext,
};

/// Lower clamp for the projected reference probability.
pub const PROB_FLOOR: f64 = 1e-8;
const NORM_FLOOR: f64 = 1e-12;

const TAG_COLLIDER: u64 = 10;
const TAG_LOO: u64 = 11;
const TAG_VARIANT: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhiSumMode {
    /// Average of the collider-variant probabilities.
    #[default]
    Mean,
    /// Plain sum, kept for comparison; can push the raw reference far
    /// below zero.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    /// `2 / (1 + |a - b|) - 1`.
    Euclidean,
    /// `2 exp(-|a - b|^2 / (2 d)) - 1`.
    Gaussian,
}

/// Similarity in `[-1, 1]`; `None` when cosine is undefined.
pub fn similarity(metric: Metric, a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "similarity dimension mismatch");
    match metric {
        Metric::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na < NORM_FLOOR || nb < NORM_FLOOR {
                return None;
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            Some((dot / (na * nb)).clamp(-1.0, 1.0))
        }
        Metric::Euclidean => {
            let dist = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            Some(2.0 / (1.0 + dist) - 1.0)
        }
        Metric::Gaussian => {
            let sq = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            Some(2.0 * (-sq / (2.0 * a.len() as f64)).exp() - 1.0)
        }
    }
}

/// `α · s(z_i, target_i)`, or `None` for a degenerate pair.
pub fn upsilon(z: &[f64], target: &[f64], alpha: f64, metric: Metric) -> Option<f64> {
    similarity(metric, z, target).map(|s| alpha * s)
}

pub fn causal_advantage(advantages: &[f64], upsilon: &[f64]) -> Result<Vec<f64>> {
    if advantages.len() != upsilon.len() {
        return Err(validation(format!(
            "{} advantages but {} causal weights",
            advantages.len(),
            upsilon.len()
        )));
    }
    Ok(advantages.iter().zip(upsilon).map(|(a, u)| a * u).collect())
}

fn mean_rows(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| validation("mean of no vectors"))?;
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(validation("representation dimension mismatch"));
    }
    let mut out = vec![0.0; d];
    for r in rows {
        out.iter_mut().zip(r).for_each(|(o, x)| *o += x);
    }
    let k = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

/// `z̄`, the coordinate-wise mean of the group's hidden states.
pub fn rep_query_baseline(z: &[Vec<f64>]) -> Result<Vec<f64>> {
    if z.len() < 2 {
        return Err(validation("baseline needs at least 2 representations"));
    }
    mean_rows(z)
}

/// Mean final hidden state of `m` samples drawn after `context SEP`.
#[allow(clippy::too_many_arguments)]
pub fn rep_conditional(
    snapshot: &PolicySnapshot,
    context: &LooContext,
    m: usize,
    max_len: usize,
    decoding: Decoding,
    seed: u64,
    counter: Option<&GenerationCounter>,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(validation("Monte Carlo width must be at least 1"));
    }
    let prompt = context.prompt(snapshot.params().vocab().sep);
    let seeds: Vec<u64> = (0..m as u64).map(|s| derive_seed(seed, &[s])).collect();
    let samples = sample_branches(snapshot, &prompt, max_len, decoding, &seeds)?;
    if let Some(c) = counter {
        c.add(m as u64);
    }
    mean_rows(&samples.into_iter().map(|s| s.hidden).collect::<Vec<_>>())
}

/// Mean over collider variants of [`rep_conditional`].
#[allow(clippy::too_many_arguments)]
pub fn rep_collider(
    snapshot: &PolicySnapshot,
    contexts: &[LooContext],
    m: usize,
    max_len: usize,
    decoding: Decoding,
    seed: u64,
    counter: Option<&GenerationCounter>,
) -> Result<Vec<f64>> {
    let reps = contexts
        .iter()
        .enumerate()
        .map(|(j, c)| {
            rep_conditional(
                snapshot,
                c,
                m,
                max_len,
                decoding,
                derive_seed(seed, &[j as u64]),
                counter,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    mean_rows(&reps)
}

/// Mean (or sum) of the collider-variant token probabilities.
pub fn phi_token_prob(probs: &[f64], mode: PhiSumMode) -> f64 {
    let s: f64 = probs.iter().sum();
    match mode {
        PhiSumMode::Mean => s / probs.len() as f64,
        PhiSumMode::Sum => s,
    }
}

/// `(clamped, raw)` with `raw = pi_xi - phi + pi_q`, clamped to
/// `[PROB_FLOOR, 1]`.
pub fn causal_ref_prob(pi_xi: f64, phi: f64, pi_q: f64) -> (f64, f64) {
    let raw = pi_xi - phi + pi_q;
    (raw.clamp(PROB_FLOOR, 1.0), raw)
}

/// Value of the causal KL averaged over groups: per group
/// `(1/n) sum_i (1/T_i) sum_j k3(ln ref_ij, ln pi(y_ij | x_i, y_i<j))`.
pub fn kl_causal(batch: &[GroupBatch], params: &PolicyParams) -> Result<f64> {
    let mut total = 0.0;
    for g in batch {
        let c = g
            .causal
            .as_ref()
            .ok_or_else(|| Error::State("causal reference missing".into()))?;
        let n = g.responses.len();
        let mut group = 0.0;
        for (i, y) in g.responses.iter().enumerate() {
            let lp = params.log_prob(&c.prompts[i], y)?;
            let s: f64 = lp
                .iter()
                .zip(&c.ref_probs[i])
                .map(|(l, r)| kl_token(r.ln(), *l))
                .sum();
            group += s / (n * y.len()) as f64;
        }
        total += group;
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalConfig {
    pub alpha: f64,
    pub kappa: f64,
    /// Monte Carlo width for the representation estimates.
    pub m: usize,
    pub phi_sum_mode: PhiSumMode,
    pub metric: Metric,
    pub upsilon_floor: Option<f64>,
    /// Test hook: replace every `Υ_i` by this value.
    pub force_upsilon: Option<f64>,
    pub max_len: usize,
    pub decoding: Decoding,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            kappa: 0.06,
            m: 2,
            phi_sum_mode: PhiSumMode::Mean,
            metric: Metric::Cosine,
            upsilon_floor: None,
            force_upsilon: None,
            max_len: 6,
            decoding: Decoding::Temperature(1.0),
        }
    }
}

impl CausalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(validation(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(validation(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        if self.m == 0 {
            return Err(validation("m must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalReps {
    pub z: Vec<Vec<f64>>,
    pub z_bar: Vec<f64>,
    /// `Z̄_i`: leave-one-out conditional means.
    pub z_cond: Vec<Vec<f64>>,
    /// `Z̄′_i`: the same averaged over collider variants.
    pub z_collider: Vec<Vec<f64>>,
    /// `Z̄_i − Z̄′_i + z̄`.
    pub target: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalWeights {
    pub alpha: f64,
    pub upsilon: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalRefTokens {
    /// Clamped reference probability per response and token.
    pub values: Vec<Vec<f64>>,
    pub raw: Vec<Vec<f64>>,
    pub clamp_count: usize,
}

impl CausalRefTokens {
    pub fn raw_range(&self) -> (f64, f64) {
        self.raw
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalComponents {
    pub collider: ColliderSet,
    pub reps: CausalReps,
    pub weights: CausalWeights,
    pub ref_tokens: CausalRefTokens,
    /// `x_i SEP` for each response, where the causal KL is evaluated.
    pub prompts: Vec<Vec<u32>>,
    /// Responses whose similarity was undefined (weight set to zero).
    pub degenerate: usize,
    pub aux_generations: u64,
}

impl CausalComponents {
    pub fn kl_inputs(&self) -> CausalKlInputs {
        CausalKlInputs {
            prompts: self.prompts.clone(),
            ref_probs: self.ref_tokens.values.clone(),
        }
    }
}

/// Run every causal step for one group under the frozen snapshot.
pub fn compute_causal(
    snapshot: &PolicySnapshot,
    group: &Group,
    advantages: &[f64],
    cfg: &CausalConfig,
    seed: u64,
) -> Result<CausalComponents> {
    cfg.validate()?;
    let n = group.n();
    if advantages.len() != n {
        return Err(validation("advantage count does not match group size"));
    }
    let params = snapshot.params();
    let sep = params.vocab().sep;
    let counter = GenerationCounter::default();
    let collider = sample_collider_outputs(
        snapshot,
        group,
        cfg.max_len,
        cfg.decoding,
        derive_seed(seed, &[TAG_COLLIDER]),
        Some(&counter),
    )?;
    let contexts: Vec<Vec<LooContext>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| build_x_ij(group, &collider, i, j, sep))
                .collect()
        })
        .collect::<Result<_>>()?;

    let z_bar = rep_query_baseline(&group.hidden)?;
    let per_response = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let zc = rep_conditional(
                snapshot,
                &contexts[i][0],
                cfg.m,
                cfg.max_len,
                cfg.decoding,
                derive_seed(seed, &[TAG_LOO, i as u64]),
                Some(&counter),
            )?;
            let zp = rep_collider(
                snapshot,
                &contexts[i],
                cfg.m,
                cfg.max_len,
                cfg.decoding,
                derive_seed(seed, &[TAG_VARIANT, i as u64]),
                Some(&counter),
            )?;
            Ok((zc, zp))
        })
        .collect::<Result<Vec<_>>>()?;
    let (z_cond, z_collider): (Vec<_>, Vec<_>) = per_response.into_iter().unzip();
    let target: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            z_cond[i]
                .iter()
                .zip(&z_collider[i])
                .zip(&z_bar)
                .map(|((a, b), c)| a - b + c)
                .collect()
        })
        .collect();

    let mut degenerate = 0;
    let mut ups = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = match upsilon(&group.hidden[i], &target[i], cfg.alpha, cfg.metric) {
            Some(u) => u,
            None => {
                degenerate += 1;
                0.0
            }
        };
        if let Some(floor) = cfg.upsilon_floor {
            u = u.max(floor);
        }
        if let Some(forced) = cfg.force_upsilon {
            u = forced;
        }
        ups.push(u);
    }
    let b = causal_advantage(advantages, &ups)?;

    // Projected per-token reference.
    let mut values = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    let mut clamp_count = 0;
    let mut prompts = Vec::with_capacity(n);
    for i in 0..n {
        let y = &group.responses[i].ids;
        let variant_probs = contexts[i]
            .iter()
            .map(|c| {
                Ok(params
                    .log_prob(&c.prompt(sep), y)?
                    .into_iter()
                    .map(f64::exp)
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let mut vi = Vec::with_capacity(y.len());
        let mut ri = Vec::with_capacity(y.len());
        for j in 0..y.len() {
            let column: Vec<f64> = variant_probs.iter().map(|p| p[j]).collect();
            let phi = phi_token_prob(&column, cfg.phi_sum_mode);
            let (clamped, r) =
                causal_ref_prob(variant_probs[0][j], phi, group.old_logps[i][j].exp());
            if !(PROB_FLOOR..=1.0).contains(&r) {
                clamp_count += 1;
            }
            vi.push(clamped);
            ri.push(r);
        }
        values.push(vi);
        raw.push(ri);
        prompts.push(contexts[i][0].prompt(sep));
    }

    let aux_generations = counter.get();
    let expected = expected_aux_generations(n, cfg.m);
    if aux_generations != expected {
        return Err(Error::State(format!(
            "generated {aux_generations} auxiliary sequences, expected {expected}"
        )));
    }
    Ok(CausalComponents {
        collider,
        reps: CausalReps {
            z: group.hidden.clone(),
            z_bar,
            z_cond,
            z_collider,
            target,
        },
        weights: CausalWeights {
            alpha: cfg.alpha,
            upsilon: ups,
            b,
        },
        ref_tokens: CausalRefTokens {
            values,
            raw,
            clamp_count,
        },
        prompts,
        degenerate,
        aux_generations,
    })
}

/// The causal surrogate: the clipped objective with `B_i` as weights,
/// minus `kappa` times the causal KL. Every group must carry causal inputs.
pub fn gcpo_objective(
    batch: &[GroupBatch],
    params: &PolicyParams,
    cfg: &SurrogateConfig,
    kappa: f64,
) -> Result<ObjectiveOutput> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(validation(format!(
            "kappa must be non-negative, got {kappa}"
        )));
    }
    evaluate_batch(batch, params, cfg, kappa, true)
}
