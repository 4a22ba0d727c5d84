use serde::{Deserialize, Serialize};

use super::{Decoder, PolicySnapshot, Role, TokenSeq};
use crate::error::{validation, Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    /// Argmax, lowest index on ties. The zero-temperature limit.
    Greedy,
    Temperature(f64),
}

impl Decoding {
    fn check(self) -> Result<()> {
        match self {
            Decoding::Temperature(t) if !(t > 0.0 && t.is_finite()) => {
                Err(validation(format!("temperature must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

/// A sampled continuation with its per-token log-probabilities under the
/// untempered policy and the final-position hidden state of
/// `context ++ tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub tokens: TokenSeq,
    pub logps: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Ancestral sampling from `context` until EOS or `max_len` tokens. BOS,
/// SEP and PAD are never emitted.
pub fn sample(
    snapshot: &PolicySnapshot,
    context: &[u32],
    max_len: usize,
    decoding: Decoding,
    seed: u64,
) -> Result<Sampled> {
    let mut out = sample_branches(snapshot, context, max_len, decoding, &[seed])?;
    Ok(out.pop().expect("one branch"))
}

/// Several independent continuations of one context, sharing the prefill.
pub fn sample_branches(
    snapshot: &PolicySnapshot,
    context: &[u32],
    max_len: usize,
    decoding: Decoding,
    seeds: &[u64],
) -> Result<Vec<Sampled>> {
    decoding.check()?;
    let p = snapshot.params();
    let max_context = p.shape().max_context;
    if context.is_empty() {
        return Err(validation("sampling needs a non-empty context"));
    }
    if max_len == 0 {
        return Err(validation("max_len must be at least 1"));
    }
    if context.len() + max_len > max_context {
        return Err(Error::Length(format!(
            "context of {} tokens plus max_len {max_len} exceeds max_context {max_context}; \
             reduce the group size n or max_len, or raise max_context",
            context.len()
        )));
    }
    let vocab = p.vocab();
    let banned = [vocab.bos, vocab.sep, vocab.pad];
    let mut prefix = Decoder::new(p);
    let mut first = Vec::new();
    for &id in context {
        first = prefix.step(id)?.1;
    }
    seeds
        .iter()
        .map(|&seed| {
            let mut rng = CounterRng::new(seed);
            let mut dec = prefix.clone();
            let mut logp = first.clone();
            let mut ids = Vec::with_capacity(max_len);
            let mut logps = Vec::with_capacity(max_len);
            loop {
                let y = choose(&logp, &banned, decoding, &mut rng);
                ids.push(y);
                logps.push(logp[y as usize]);
                let (hidden, next) = dec.step(y)?;
                if y == vocab.eos || ids.len() == max_len {
                    return Ok(Sampled {
                        tokens: TokenSeq::new(ids, Role::Response),
                        logps,
                        hidden,
                    });
                }
                logp = next;
            }
        })
        .collect()
}

fn choose(logp: &[f64], banned: &[u32], decoding: Decoding, rng: &mut CounterRng) -> u32 {
    let allowed = |i: usize| !banned.contains(&(i as u32));
    match decoding {
        Decoding::Greedy => {
            let mut best = None;
            for (i, &l) in logp.iter().enumerate() {
                if allowed(i) && best.is_none_or(|(_, b)| l > b) {
                    best = Some((i, l));
                }
            }
            best.expect("vocab has non-special tokens").0 as u32
        }
        Decoding::Temperature(t) => {
            let scaled: Vec<f64> = logp
                .iter()
                .enumerate()
                .map(|(i, l)| if allowed(i) { l / t } else { f64::NEG_INFINITY })
                .collect();
            let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
            let total: f64 = w.iter().sum();
            let u = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut last = 0;
            for (i, wi) in w.iter().enumerate() {
                if *wi == 0.0 {
                    continue;
                }
                acc += wi;
                last = i;
                if u < acc {
                    return i as u32;
                }
            }
            last as u32
        }
    }
}
