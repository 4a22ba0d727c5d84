//! Group sampling, collider outputs and the leave-one-out contexts.
//!
//! Contexts are joined with SEP in a fixed order:
//! `q SEP y_0 SEP .. SEP y_{n-1} SEP y_n`, with the excluded response
//! removed. The sampler never emits SEP, so splitting on it recovers the
//! components exactly.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::policy::{sample, sample_branches, Decoding, PolicySnapshot, Role, TokenSeq};
use crate::rng::derive_seed;

const TAG_GROUP: u64 = 1;
const TAG_COLLIDER: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub q: TokenSeq,
    pub responses: Vec<TokenSeq>,
    /// Per-token log-probs of each response under the sampling snapshot.
    pub old_logps: Vec<Vec<f64>>,
    /// Final hidden state of `q ++ y_i` under the sampling snapshot.
    pub hidden: Vec<Vec<f64>>,
    pub version: u64,
    pub seeds: Vec<u64>,
}

impl Group {
    pub fn n(&self) -> usize {
        self.responses.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColliderSet {
    pub y_n: TokenSeq,
    /// `y_{n,1} .. y_{n,n-1}`.
    pub extras: Vec<TokenSeq>,
    pub seeds: Vec<u64>,
}

impl ColliderSet {
    /// `y_{n,j}`, with `y_{n,0} = y_n`.
    pub fn variant(&self, j: usize) -> Option<&TokenSeq> {
        if j == 0 {
            Some(&self.y_n)
        } else {
            self.extras.get(j - 1)
        }
    }

    pub fn len(&self) -> usize {
        1 + self.extras.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LooContext {
    pub i: usize,
    /// Collider variant in the final slot; `0` is `y_n` itself.
    pub j: usize,
    pub tokens: TokenSeq,
}

impl LooContext {
    /// Tokens after which a stand-in for the excluded response is generated
    /// or scored: the context followed by one SEP.
    pub fn prompt(&self, sep: u32) -> Vec<u32> {
        let mut p = self.tokens.ids.clone();
        p.push(sep);
        p
    }
}

/// Counts sampled sequences; shared across parallel workers.
#[derive(Debug, Default)]
pub struct GenerationCounter(AtomicU64);

impl GenerationCounter {
    pub fn add(&self, k: u64) {
        self.0.fetch_add(k, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Auxiliary generations per query per causal step: collider outputs,
/// leave-one-out samples and collider-variant samples.
pub fn expected_aux_generations(n: usize, m: usize) -> u64 {
    (n + n * m + n * n * m) as u64
}

/// Sample `n` responses to `q` from the frozen snapshot.
pub fn sample_group(
    snapshot: &PolicySnapshot,
    q: &TokenSeq,
    n: usize,
    max_len: usize,
    decoding: Decoding,
    seed: u64,
) -> Result<Group> {
    if n < 2 {
        return Err(validation(format!(
            "group size must be at least 2, got {n}"
        )));
    }
    let seeds: Vec<u64> = (0..n as u64)
        .map(|i| derive_seed(seed, &[TAG_GROUP, i]))
        .collect();
    let samples = seeds
        .par_iter()
        .map(|&s| sample(snapshot, &q.ids, max_len, decoding, s))
        .collect::<Result<Vec<_>>>()?;
    let mut group = Group {
        q: q.clone(),
        responses: Vec::with_capacity(n),
        old_logps: Vec::with_capacity(n),
        hidden: Vec::with_capacity(n),
        version: snapshot.version,
        seeds,
    };
    for s in samples {
        group.responses.push(s.tokens);
        group.old_logps.push(s.logps);
        group.hidden.push(s.hidden);
    }
    Ok(group)
}

fn join(parts: &[&TokenSeq], sep: u32) -> Vec<u32> {
    let mut out = Vec::new();
    for (k, p) in parts.iter().enumerate() {
        if k > 0 {
            out.push(sep);
        }
        out.extend_from_slice(&p.ids);
    }
    out
}

/// `q SEP y_0 SEP .. SEP y_{n-1} SEP`, the prompt for collider outputs.
pub fn collider_prompt(group: &Group, sep: u32) -> Vec<u32> {
    let parts: Vec<&TokenSeq> = std::iter::once(&group.q).chain(&group.responses).collect();
    let mut ids = join(&parts, sep);
    ids.push(sep);
    ids
}

/// Draw `n` collider outputs from `(q, y_0..y_{n-1})`; the first is `y_n`.
pub fn sample_collider_outputs(
    snapshot: &PolicySnapshot,
    group: &Group,
    max_len: usize,
    decoding: Decoding,
    seed: u64,
    counter: Option<&GenerationCounter>,
) -> Result<ColliderSet> {
    let n = group.n();
    if n < 2 {
        return Err(validation("group needs at least 2 responses"));
    }
    let prompt = collider_prompt(group, snapshot.params().vocab().sep);
    let seeds: Vec<u64> = (0..n as u64)
        .map(|l| derive_seed(seed, &[TAG_COLLIDER, l]))
        .collect();
    let mut outs =
        sample_branches(snapshot, &prompt, max_len, decoding, &seeds).map_err(|e| match e {
            Error::Length(msg) => Error::Length(format!("collider context: {msg}")),
            other => other,
        })?;
    if let Some(c) = counter {
        c.add(n as u64);
    }
    let y_n = outs.remove(0).tokens;
    Ok(ColliderSet {
        y_n: TokenSeq::new(y_n.ids, Role::Response),
        extras: outs.into_iter().map(|s| s.tokens).collect(),
        seeds,
    })
}

/// `x_{i,j}`: the query, every response except `y_i`, then `y_{n,j}`.
pub fn build_x_ij(
    group: &Group,
    collider: &ColliderSet,
    i: usize,
    j: usize,
    sep: u32,
) -> Result<LooContext> {
    let n = group.n();
    if i >= n {
        return Err(Error::Index(format!(
            "response index {i} out of range for n = {n}"
        )));
    }
    if j >= n || j >= collider.len() {
        return Err(Error::Index(format!(
            "collider index {j} out of range for n = {n}"
        )));
    }
    let last = collider.variant(j).expect("checked range");
    let parts: Vec<&TokenSeq> = std::iter::once(&group.q)
        .chain(
            group
                .responses
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, r)| r),
        )
        .chain(std::iter::once(last))
        .collect();
    Ok(LooContext {
        i,
        j,
        tokens: TokenSeq::new(join(&parts, sep), Role::Context),
    })
}

/// `x_i`, the same as `x_{i,0}`.
pub fn build_x_i(group: &Group, collider: &ColliderSet, i: usize, sep: u32) -> Result<LooContext> {
    build_x_ij(group, collider, i, 0, sep)
}

/// Split a joined context back into its components.
pub fn split_context(tokens: &[u32], sep: u32) -> Vec<Vec<u32>> {
    tokens.split(|&t| t == sep).map(<[u32]>::to_vec).collect()
}

/// Audit record of one query's rollouts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub step: u64,
    pub query_seed: u64,
    pub q: Vec<u32>,
    pub responses: Vec<Vec<u32>>,
    pub rewards: Vec<f64>,
    pub group_seeds: Vec<u64>,
    pub collider: Option<Vec<Vec<u32>>>,
    pub collider_seeds: Option<Vec<u64>>,
}
