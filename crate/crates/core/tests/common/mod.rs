//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use gcpo::objective::{CausalKlInputs, GroupBatch};
use gcpo::policy::{ModelShape, PolicyParams, Vocab};
use gcpo::rng::CounterRng;

pub fn small_shape(vocab: &Vocab) -> ModelShape {
    ModelShape {
        d: 16,
        layers: 1,
        vocab_size: vocab.len(),
        max_context: 64,
    }
}

/// A policy whose only non-zero output parameters are the output bias,
/// so every next-token distribution is `softmax(bias)` whatever the context.
pub fn bias_policy(bias: &[f64]) -> PolicyParams {
    let vocab = Vocab::arithmetic();
    assert_eq!(bias.len(), vocab.len());
    let mut p = PolicyParams::init(small_shape(&vocab), &vocab, 3).unwrap();
    let end = p.output_projection_range().end;
    p.values[end - bias.len()..end].copy_from_slice(bias);
    p
}

/// A policy with every output parameter randomised, so distributions
/// depend on the context.
pub fn random_policy(seed: u64) -> PolicyParams {
    let vocab = Vocab::arithmetic();
    let mut p = PolicyParams::init(small_shape(&vocab), &vocab, seed).unwrap();
    let mut rng = CounterRng::new(seed ^ 0xABCD);
    for i in p.output_projection_range() {
        p.values[i] = 0.5 * rng.normal();
    }
    p
}

/// Independent log-softmax.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
    x.iter().map(|v| v - m - z.ln()).collect()
}

/// Bias values that are exact in f32 and give a non-uniform distribution.
pub fn fixture_bias() -> Vec<f64> {
    (0..17)
        .map(|v| ((v * 7 % 11) as f64 - 5.0) * 0.25)
        .collect()
}

pub fn query() -> Vec<u32> {
    vec![0, 7, 14, 9, 15]
}

/// A batch with one group whose old and reference log-probs are offset
/// from `lp` by the given amounts.
pub fn group_with_offsets(
    responses: &[Vec<u32>],
    lp: &[Vec<f64>],
    old_offsets: &[Vec<f64>],
    ref_offsets: &[Vec<f64>],
    weights: &[f64],
) -> GroupBatch {
    let shift = |o: &[Vec<f64>]| -> Vec<Vec<f64>> {
        lp.iter()
            .zip(o)
            .map(|(l, d)| l.iter().zip(d).map(|(a, b)| a - b).collect())
            .collect()
    };
    GroupBatch {
        q: query(),
        responses: responses.to_vec(),
        old_logps: shift(old_offsets),
        ref_logps: shift(ref_offsets),
        weights: weights.to_vec(),
        causal: None,
    }
}

pub fn causal_inputs(prompts: Vec<Vec<u32>>, ref_probs: Vec<Vec<f64>>) -> CausalKlInputs {
    CausalKlInputs { prompts, ref_probs }
}

/// Central-difference derivative of `f` along coordinate `i`.
pub fn central_difference(
    params: &PolicyParams,
    i: usize,
    h: f64,
    f: impl Fn(&PolicyParams) -> f64,
) -> f64 {
    let mut plus = params.clone();
    plus.values[i] += h;
    let mut minus = params.clone();
    minus.values[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const EPS: f64 = 0.2;
pub const BETA: f64 = 0.04;
pub const KAPPA: f64 = 0.06;

/// One group ready for evaluation plus independently computed objective
/// value and bias gradient.
pub struct OracleFixture {
    pub params: PolicyParams,
    pub batch: GroupBatch,
    pub kappa: f64,
    pub value: f64,
    pub bias_grad: Vec<f64>,
}

fn oracle_terms(
    pi_log: &[f64],
    batch: &GroupBatch,
    kappa: f64,
    causal_ref: Option<&[Vec<f64>]>,
) -> (f64, Vec<f64>) {
    let v = pi_log.len();
    let n = batch.responses.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; v];
    for (i, y) in batch.responses.iter().enumerate() {
        let t = y.len() as f64;
        let a = batch.weights[i];
        for (j, &tok) in y.iter().enumerate() {
            let lp = pi_log[tok as usize];
            let r = (lp - batch.old_logps[i][j]).exp();
            let raw = r * a;
            let cut = r.clamp(1.0 - EPS, 1.0 + EPS) * a;
            let (s, ds) = if raw <= cut { (raw, raw) } else { (cut, 0.0) };
            let d = batch.ref_logps[i][j] - lp;
            let k = d.exp() - d - 1.0;
            let dk = 1.0 - d.exp();
            let mut term = s - BETA * k;
            let mut dterm = ds - BETA * dk;
            if let Some(c) = causal_ref {
                let dc = c[i][j].ln() - lp;
                term -= kappa * (dc.exp() - dc - 1.0);
                dterm -= kappa * (1.0 - dc.exp());
            }
            value += term / (n * t);
            for (w, g) in grad.iter_mut().enumerate() {
                let onehot = if w == tok as usize { 1.0 } else { 0.0 };
                *g += dterm * (onehot - pi_log[w].exp()) / (n * t);
            }
        }
    }
    (value, grad)
}

/// Three responses of two tokens under a bias-only policy, with ratios on
/// both sides of the clip range and both advantage signs.
pub fn grpo_fixture() -> OracleFixture {
    let bias = fixture_bias();
    let params = bias_policy(&bias);
    let pi_log = log_softmax(&bias);
    let responses = vec![vec![5, 16], vec![16, 6], vec![7, 1]];
    let lp: Vec<Vec<f64>> = responses
        .iter()
        .map(|y: &Vec<u32>| y.iter().map(|&t| pi_log[t as usize]).collect())
        .collect();
    let batch = group_with_offsets(
        &responses,
        &lp,
        &[vec![0.35, -0.1], vec![0.05, -0.45], vec![0.3, 0.0]],
        &[vec![0.2, -0.3], vec![0.0, 0.1], vec![-0.25, 0.4]],
        &[1.2, -0.5, -0.7],
    );
    let (value, bias_grad) = oracle_terms(&pi_log, &batch, 0.0, None);
    OracleFixture {
        params,
        batch,
        kappa: 0.0,
        value,
        bias_grad,
    }
}

/// Two responses of two tokens with causal weights and a causal reference.
pub fn gcpo_fixture() -> OracleFixture {
    let bias = fixture_bias();
    let params = bias_policy(&bias);
    let pi_log = log_softmax(&bias);
    let responses = vec![vec![9, 16], vec![16, 12]];
    let lp: Vec<Vec<f64>> = responses
        .iter()
        .map(|y: &Vec<u32>| y.iter().map(|&t| pi_log[t as usize]).collect())
        .collect();
    // Rewards 1.1 and 0.1: mean 0.6, population std 0.5, so A = (1, -1).
    let rewards = [1.1f64, 0.1];
    let mean = (rewards[0] + rewards[1]) / 2.0;
    let std = (((rewards[0] - mean) * (rewards[0] - mean)
        + (rewards[1] - mean) * (rewards[1] - mean))
        / 2.0)
        .sqrt();
    let a: Vec<f64> = rewards.iter().map(|r| (r - mean) / std).collect();
    let upsilon = [1.5, -0.4];
    let b: Vec<f64> = a.iter().zip(upsilon).map(|(a, u)| a * u).collect();
    let mut batch = group_with_offsets(
        &responses,
        &lp,
        &[vec![0.1, -0.3], vec![0.4, 0.02]],
        &[vec![-0.15, 0.05], vec![0.3, -0.2]],
        &b,
    );
    let ref_probs = vec![vec![0.08, 0.3], vec![0.12, 0.02]];
    batch.causal = Some(causal_inputs(
        vec![
            vec![0, 7, 14, 9, 15, 2, 16, 12, 2, 3, 2],
            vec![0, 7, 14, 9, 15, 2, 9, 16, 2, 3, 2],
        ],
        ref_probs.clone(),
    ));
    let (value, bias_grad) = oracle_terms(&pi_log, &batch, KAPPA, Some(&ref_probs));
    OracleFixture {
        params,
        batch,
        kappa: KAPPA,
        value,
        bias_grad,
    }
}

pub fn bias_range(p: &PolicyParams) -> std::ops::Range<usize> {
    let end = p.output_projection_range().end;
    end - p.vocab().len()..end
}

/// A one-group batch on a context-dependent policy, for finite differences.
/// Old log-probs sit well inside or outside the clip range so no ratio is
/// near a kink.
pub fn fd_fixture(seed: u64, causal: bool) -> (PolicyParams, Vec<GroupBatch>) {
    let params = random_policy(seed);
    let responses: Vec<Vec<u32>> = vec![vec![5, 16, 8], vec![16, 4], vec![11, 16, 13, 1]];
    let offsets = [0.05, -0.6, 0.5, -0.08, 0.02, 0.7];
    let mut k = 0;
    let mut old = Vec::new();
    let mut reference = Vec::new();
    for y in &responses {
        let lp = params.log_prob(&query(), y).unwrap();
        old.push(
            lp.iter()
                .map(|l| {
                    k += 1;
                    l - offsets[k % offsets.len()]
                })
                .collect(),
        );
        reference.push(lp.iter().map(|l| l + 0.3).collect());
    }
    let mut batch = GroupBatch {
        q: query(),
        responses: responses.clone(),
        old_logps: old,
        ref_logps: reference,
        weights: vec![0.9, -1.3, 0.4],
        causal: None,
    };
    if causal {
        let prompts = (0..3)
            .map(|i| {
                let mut p = query();
                for (k, y) in responses.iter().enumerate() {
                    if k != i {
                        p.push(2);
                        p.extend(y);
                    }
                }
                p.push(2);
                p
            })
            .collect();
        let ref_probs = responses
            .iter()
            .map(|y| y.iter().map(|&t| 0.02 + 0.01 * t as f64).collect())
            .collect();
        batch.causal = Some(causal_inputs(prompts, ref_probs));
    }
    (params, vec![batch])
}
