//! Synthetic verifiable tasks: `k`-digit modular addition with an answer
//! delimiter, scored by accuracy plus a small format bonus.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::policy::{sample, Decoding, PolicySnapshot, Role, TokenSeq, Vocab};
use crate::rng::{derive_seed, CounterRng};

pub const ACCURACY_REWARD: f64 = 1.0;
pub const FORMAT_REWARD: f64 = 0.1;

/// Training query seeds live in `[0, EVAL_SEED_START)`; evaluation seeds
/// start here.
pub const EVAL_SEED_START: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Operand and answer width `k`.
    pub digits: usize,
    pub delimiter: String,
}

impl TaskSpec {
    pub fn modadd(digits: usize) -> Self {
        Self {
            name: "modadd".into(),
            digits,
            delimiter: "#".into(),
        }
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.name != "modadd" {
            return Err(validation(format!("unknown task `{}`", self.name)));
        }
        if self.digits == 0 || self.digits > 9 {
            return Err(validation(format!(
                "digits must be in 1..=9, got {}",
                self.digits
            )));
        }
        for sym in ["+", "=", self.delimiter.as_str()] {
            if vocab.id(sym).is_none() {
                return Err(validation(format!("vocab lacks `{sym}`")));
            }
        }
        if (0..10).any(|d| vocab.id(&d.to_string()).is_none()) {
            return Err(validation("vocab lacks digit tokens"));
        }
        Ok(())
    }

    fn modulus(&self) -> u64 {
        10u64.pow(self.digits as u32)
    }

    /// Query for explicit operands: `<bos> a + b =` with zero-padded operands.
    pub fn instance(&self, vocab: &Vocab, a: u64, b: u64, seed: u64) -> Result<QueryInstance> {
        self.validate(vocab)?;
        let m = self.modulus();
        if a >= m || b >= m {
            return Err(validation(format!("operands must be below {m}")));
        }
        let mut ids = vec![vocab.bos];
        let digits = |x: u64| format!("{x:0width$}", width = self.digits);
        let push_str = |ids: &mut Vec<u32>, s: &str| {
            for ch in s.chars() {
                ids.push(vocab.id(&ch.to_string()).expect("validated digit"));
            }
        };
        push_str(&mut ids, &digits(a));
        ids.push(vocab.id("+").expect("validated"));
        push_str(&mut ids, &digits(b));
        ids.push(vocab.id("=").expect("validated"));
        Ok(QueryInstance {
            q: TokenSeq::new(ids, Role::Query),
            canonical_answer: ((a + b) % m).to_string(),
            seed,
            a,
            b,
        })
    }

    /// Answer tokens the task accepts: `# <digits> <eos>`.
    pub fn answer_tokens(&self, vocab: &Vocab, answer: &str) -> Vec<u32> {
        let mut ids = vec![vocab.id(&self.delimiter).expect("validated delimiter")];
        ids.extend(
            answer
                .chars()
                .map(|c| vocab.id(&c.to_string()).expect("digit")),
        );
        ids.push(vocab.eos);
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub q: TokenSeq,
    pub canonical_answer: String,
    pub seed: u64,
    pub a: u64,
    pub b: u64,
}

impl QueryInstance {
    /// Recover the operands from the query tokens.
    pub fn parse_operands(&self, vocab: &Vocab) -> Option<(u64, u64)> {
        let text: String = self
            .q
            .ids
            .get(1..)?
            .iter()
            .map(|&i| vocab.symbol(i))
            .collect();
        let body = text.strip_suffix('=')?;
        let (a, b) = body.split_once('+')?;
        Some((a.parse().ok()?, b.parse().ok()?))
    }
}

/// Seeded query: operands drawn uniformly below `10^k`.
pub fn gen_query(task: &TaskSpec, vocab: &Vocab, seed: u64) -> Result<QueryInstance> {
    task.validate(vocab)?;
    let mut rng = CounterRng::new(derive_seed(seed, &[0x7155]));
    let m = task.modulus();
    let a = rng.below(m);
    let b = rng.below(m);
    task.instance(vocab, a, b, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub format: f64,
    pub total: f64,
}

/// Format credit needs exactly one delimiter followed by at least one
/// digit; the maximal digit run after it is the extracted answer.
pub fn reward(
    task: &TaskSpec,
    vocab: &Vocab,
    query: &QueryInstance,
    response: &TokenSeq,
) -> RewardBreakdown {
    let zero = RewardBreakdown {
        accuracy: 0.0,
        format: 0.0,
        total: 0.0,
    };
    let Some(delim) = vocab.id(&task.delimiter) else {
        return zero;
    };
    let mut hits = response.ids.iter().enumerate().filter(|(_, &t)| t == delim);
    let Some((pos, _)) = hits.next() else {
        return zero;
    };
    if hits.next().is_some() {
        return zero;
    }
    let answer: String = response.ids[pos + 1..]
        .iter()
        .map(|&t| vocab.symbol(t))
        .take_while(|s| s.len() == 1 && s.as_bytes()[0].is_ascii_digit())
        .collect();
    if answer.is_empty() {
        return zero;
    }
    let accuracy = if answer == query.canonical_answer {
        ACCURACY_REWARD
    } else {
        0.0
    };
    RewardBreakdown {
        accuracy,
        format: FORMAT_REWARD,
        total: accuracy + FORMAT_REWARD,
    }
}

/// Anything that answers a query with one response. Policies answer by
/// greedy decoding; tests plug in oracles.
pub trait Responder {
    fn respond(&self, query: &QueryInstance, max_len: usize) -> Result<TokenSeq>;
}

impl Responder for PolicySnapshot {
    fn respond(&self, query: &QueryInstance, max_len: usize) -> Result<TokenSeq> {
        Ok(sample(self, &query.q.ids, max_len, Decoding::Greedy, query.seed)?.tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pass_at_1: f64,
    pub mean_reward: f64,
    pub n_eval: usize,
}

/// Score one greedy response per query for seeds `first_seed..first_seed + n_eval`.
pub fn evaluate_responder(
    responder: &dyn Responder,
    task: &TaskSpec,
    vocab: &Vocab,
    n_eval: usize,
    first_seed: u64,
    max_len: usize,
) -> Result<EvalReport> {
    if n_eval == 0 {
        return Err(validation("n_eval must be at least 1"));
    }
    let (mut correct, mut total) = (0usize, 0.0);
    for i in 0..n_eval as u64 {
        let q = gen_query(task, vocab, first_seed + i)?;
        let y = responder.respond(&q, max_len)?;
        let r = reward(task, vocab, &q, &y);
        if r.accuracy == ACCURACY_REWARD {
            correct += 1;
        }
        total += r.total;
    }
    Ok(EvalReport {
        pass_at_1: correct as f64 / n_eval as f64,
        mean_reward: total / n_eval as f64,
        n_eval,
    })
}

/// Fraction of `n_eval` held-out queries answered correctly by a single
/// greedy decode.
pub fn pass_at_1(
    responder: &dyn Responder,
    task: &TaskSpec,
    vocab: &Vocab,
    n_eval: usize,
    seed: u64,
    max_len: usize,
) -> Result<f64> {
    Ok(evaluate_responder(responder, task, vocab, n_eval, seed, max_len)?.pass_at_1)
}
