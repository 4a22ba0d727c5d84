use serde::{Deserialize, Serialize};

use super::Vocab;
use crate::autodiff::{Tape, Tensor};
use crate::error::{validation, Error, Result};
use crate::kernels::{attend_row, gelu, log_softmax_row, matmul_row, rms_norm_row};
use crate::rng::CounterRng;

pub const DEFAULT_MAX_CONTEXT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub d: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub max_context: usize,
}

impl ModelShape {
    /// Heads of width 16 when `d` allows it, otherwise a single head.
    pub fn heads(&self) -> usize {
        if self.d.is_multiple_of(16) {
            self.d / 16
        } else {
            1
        }
    }

    fn block_len(&self) -> usize {
        let d = self.d;
        d + 4 * d * d + d + d * 4 * d + 4 * d + 4 * d * d + d
    }

    pub fn param_count(&self) -> usize {
        let (d, v) = (self.d, self.vocab_size);
        v * d + self.max_context * d + self.layers * self.block_len() + d + d * v + v
    }

    /// Inverse of [`ModelShape::param_count`] in the context length.
    pub fn with_param_count(
        d: usize,
        layers: usize,
        vocab_size: usize,
        count: usize,
    ) -> Option<Self> {
        let base = ModelShape {
            d,
            layers,
            vocab_size,
            max_context: 0,
        };
        let fixed = base.param_count();
        if d == 0 || count < fixed || !(count - fixed).is_multiple_of(d) {
            return None;
        }
        Some(ModelShape {
            max_context: (count - fixed) / d,
            ..base
        })
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.max_context == 0 {
            return Err(validation(format!(
                "d, layers and max_context must be positive (got {}, {}, {})",
                self.d, self.layers, self.max_context
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockOffsets {
    g1: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    g2: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Flat parameter layout: token embedding, position embedding, blocks in
/// index order, final gain, output projection, output bias.
#[derive(Debug, Clone)]
struct Layout {
    tok: usize,
    pos: usize,
    blocks: Vec<BlockOffsets>,
    gf: usize,
    wout: usize,
    bout: usize,
}

impl Layout {
    fn new(s: &ModelShape) -> Self {
        let (d, v) = (s.d, s.vocab_size);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok = take(v * d);
        let pos = take(s.max_context * d);
        let blocks = (0..s.layers)
            .map(|_| BlockOffsets {
                g1: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                g2: take(d),
                w1: take(d * 4 * d),
                b1: take(4 * d),
                w2: take(4 * d * d),
                b2: take(d),
            })
            .collect();
        let gf = take(d);
        let wout = take(d * v);
        let bout = take(v);
        Self {
            tok,
            pos,
            blocks,
            gf,
            wout,
            bout,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyParams {
    shape: ModelShape,
    vocab: Vocab,
    layout: Layout,
    pub values: Vec<f64>,
}

impl PartialEq for PolicyParams {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.vocab == other.vocab && self.values == other.values
    }
}

/// Initialise a policy with the default context length.
pub fn init_policy(d: usize, layers: usize, vocab: &Vocab, seed: u64) -> Result<PolicyParams> {
    let shape = ModelShape {
        d,
        layers,
        vocab_size: vocab.len(),
        max_context: DEFAULT_MAX_CONTEXT,
    };
    PolicyParams::init(shape, vocab, seed)
}

impl PolicyParams {
    /// Seeded initialisation. The output projection and bias start at zero,
    /// so every next-token distribution is initially uniform.
    pub fn init(shape: ModelShape, vocab: &Vocab, seed: u64) -> Result<Self> {
        shape.validate()?;
        if shape.vocab_size != vocab.len() {
            return Err(validation("shape vocab size does not match vocab"));
        }
        let layout = Layout::new(&shape);
        let mut values = vec![0.0; shape.param_count()];
        let mut rng = CounterRng::new(seed);
        let d = shape.d;
        let mut fill = |values: &mut [f64], std: f64| {
            for v in values.iter_mut() {
                *v = std * rng.normal();
            }
        };
        fill(
            &mut values[layout.tok..layout.tok + shape.vocab_size * d],
            0.1,
        );
        fill(
            &mut values[layout.pos..layout.pos + shape.max_context * d],
            0.1,
        );
        let lin = 1.0 / (d as f64).sqrt();
        let resid = lin / (2.0 * shape.layers as f64).sqrt();
        for b in &layout.blocks {
            values[b.g1..b.g1 + d].fill(1.0);
            values[b.g2..b.g2 + d].fill(1.0);
            fill(&mut values[b.wq..b.wq + d * d], lin);
            fill(&mut values[b.wk..b.wk + d * d], lin);
            fill(&mut values[b.wv..b.wv + d * d], lin);
            fill(&mut values[b.wo..b.wo + d * d], resid);
            fill(&mut values[b.w1..b.w1 + 4 * d * d], lin);
            fill(&mut values[b.w2..b.w2 + 4 * d * d], resid / 2.0);
        }
        values[layout.gf..layout.gf + d].fill(1.0);
        let mut p = Self {
            shape,
            vocab: vocab.clone(),
            layout,
            values,
        };
        p.round_to_f32();
        Ok(p)
    }

    pub(crate) fn from_values(shape: ModelShape, vocab: &Vocab, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(Error::Format(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                values.len()
            )));
        }
        Ok(Self {
            shape,
            vocab: vocab.clone(),
            layout: Layout::new(&shape),
            values,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Round every value to the nearest `f32` so checkpoints round-trip
    /// exactly.
    pub fn round_to_f32(&mut self) {
        self.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Offset and length of the output projection block (for tests that
    /// perturb the policy away from uniform).
    pub fn output_projection_range(&self) -> std::ops::Range<usize> {
        self.layout.wout..self.layout.bout + self.shape.vocab_size
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.shape.max_context {
            return Err(Error::Length(format!(
                "sequence of {} tokens exceeds max_context {}",
                ids.len(),
                self.shape.max_context
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.shape.vocab_size) {
            return Err(validation(format!("token id {bad} outside vocab")));
        }
        Ok(())
    }

    /// Hidden rows and log-probability rows for every position.
    pub fn forward(&self, ids: &[u32]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_ids(ids)?;
        let mut dec = Decoder::new(self);
        let mut hidden = Vec::with_capacity(ids.len());
        let mut logps = Vec::with_capacity(ids.len());
        for &id in ids {
            let (h, l) = dec.step(id)?;
            hidden.push(h);
            logps.push(l);
        }
        Ok((hidden, logps))
    }

    /// `log pi(continuation_j | context, continuation_<j)` for every `j`.
    pub fn log_prob(&self, context: &[u32], continuation: &[u32]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(validation("log_prob needs a non-empty context"));
        }
        if continuation.is_empty() {
            return Ok(Vec::new());
        }
        let mut ids = context.to_vec();
        ids.extend_from_slice(&continuation[..continuation.len() - 1]);
        self.check_ids(&[context, continuation].concat())?;
        let (_, logps) = self.forward(&ids)?;
        let c = context.len();
        Ok(continuation
            .iter()
            .enumerate()
            .map(|(j, &y)| logps[c - 1 + j][y as usize])
            .collect())
    }

    /// Full next-token log-distribution after `ids`.
    pub fn next_logprobs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(validation("empty sequence"));
        }
        let (_, mut logps) = self.forward(ids)?;
        Ok(logps.pop().expect("non-empty"))
    }

    /// Final-norm state at the last position, the input to the output
    /// projection.
    pub fn final_hidden(&self, ids: &[u32]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(validation("final_hidden needs a non-empty sequence"));
        }
        let (mut hidden, _) = self.forward(ids)?;
        Ok(hidden.pop().expect("non-empty"))
    }
}

/// Incremental forward pass with a key/value cache. Produces exactly the
/// same bits as the taped forward for every position.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    p: &'a PolicyParams,
    keys: Vec<Vec<f64>>,
    vals: Vec<Vec<f64>>,
    pos: usize,
}

fn scaled_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    rms_norm_row(&mut a);
    a.iter_mut().zip(gain).for_each(|(a, g)| *a *= g);
    a
}

fn project(x: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    matmul_row(x, w, n, &mut out);
    out
}

fn add_into(x: &mut [f64], y: &[f64]) {
    x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
}

impl<'a> Decoder<'a> {
    pub fn new(p: &'a PolicyParams) -> Self {
        let l = p.shape.layers;
        Self {
            p,
            keys: vec![Vec::new(); l],
            vals: vec![Vec::new(); l],
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feed one token; returns the hidden row and next-token log-probs.
    pub fn step(&mut self, id: u32) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = &self.p.shape;
        let (d, v) = (s.d, s.vocab_size);
        if self.pos >= s.max_context {
            return Err(Error::Length(format!(
                "position {} exceeds max_context {}",
                self.pos, s.max_context
            )));
        }
        if id as usize >= v {
            return Err(validation(format!("token id {id} outside vocab")));
        }
        let w = &self.p.values;
        let lay = &self.p.layout;
        let t = self.pos;
        let slice = |o: usize, n: usize| &w[o..o + n];
        let tok = slice(lay.tok + id as usize * d, d);
        let pe = slice(lay.pos + t * d, d);
        let mut x: Vec<f64> = tok.iter().zip(pe).map(|(a, b)| a + b).collect();
        for (l, b) in lay.blocks.iter().enumerate() {
            let a = scaled_norm(&x, slice(b.g1, d));
            let q = project(&a, slice(b.wq, d * d), d);
            let k = project(&a, slice(b.wk, d * d), d);
            let vv = project(&a, slice(b.wv, d * d), d);
            self.keys[l].extend_from_slice(&k);
            self.vals[l].extend_from_slice(&vv);
            let mut att = vec![0.0; d];
            attend_row(
                &q,
                &self.keys[l],
                &self.vals[l],
                t,
                s.heads(),
                &mut att,
                None,
            );
            add_into(&mut x, &project(&att, slice(b.wo, d * d), d));
            let bn = scaled_norm(&x, slice(b.g2, d));
            let mut h = project(&bn, slice(b.w1, 4 * d * d), 4 * d);
            add_into(&mut h, slice(b.b1, 4 * d));
            h.iter_mut().for_each(|z| *z = gelu(*z));
            let mut m = project(&h, slice(b.w2, 4 * d * d), d);
            add_into(&mut m, slice(b.b2, d));
            add_into(&mut x, &m);
        }
        let hidden = scaled_norm(&x, slice(lay.gf, d));
        let mut logits = project(&hidden, slice(lay.wout, d * v), v);
        add_into(&mut logits, slice(lay.bout, v));
        let mut logp = vec![0.0; v];
        log_softmax_row(&logits, &mut logp);
        self.pos += 1;
        Ok((hidden, logp))
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockTensors {
    g1: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    g2: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// The policy's parameters bound as leaves of one tape. Binding once and
/// reusing the handles keeps every sequence of a batch on shared leaves.
#[derive(Debug, Clone)]
pub struct TapeModel {
    shape: ModelShape,
    tok: Tensor,
    pos: Tensor,
    blocks: Vec<BlockTensors>,
    gf: Tensor,
    wout: Tensor,
    bout: Tensor,
}

impl TapeModel {
    /// `tape` must have been created over `params.values`.
    pub fn bind(params: &PolicyParams, tape: &mut Tape<'_>) -> Self {
        let s = params.shape;
        let lay = &params.layout;
        let (d, v) = (s.d, s.vocab_size);
        let blocks = lay
            .blocks
            .iter()
            .map(|b| BlockTensors {
                g1: tape.param(b.g1, 1, d),
                wq: tape.param(b.wq, d, d),
                wk: tape.param(b.wk, d, d),
                wv: tape.param(b.wv, d, d),
                wo: tape.param(b.wo, d, d),
                g2: tape.param(b.g2, 1, d),
                w1: tape.param(b.w1, d, 4 * d),
                b1: tape.param(b.b1, 1, 4 * d),
                w2: tape.param(b.w2, 4 * d, d),
                b2: tape.param(b.b2, 1, d),
            })
            .collect();
        Self {
            shape: s,
            tok: tape.param(lay.tok, v, d),
            pos: tape.param(lay.pos, s.max_context, d),
            blocks,
            gf: tape.param(lay.gf, 1, d),
            wout: tape.param(lay.wout, d, v),
            bout: tape.param(lay.bout, 1, v),
        }
    }

    /// Taped forward: `(hidden, log_probs)`, both one row per position.
    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[u32]) -> Result<(Tensor, Tensor)> {
        if ids.is_empty() {
            return Err(validation("empty sequence"));
        }
        if ids.len() > self.shape.max_context {
            return Err(Error::Length(format!(
                "sequence of {} tokens exceeds max_context {}",
                ids.len(),
                self.shape.max_context
            )));
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let te = tape.rows(self.tok, &idx);
        let pe = tape.rows(self.pos, &positions);
        let mut x = tape.add(te, pe);
        for b in &self.blocks {
            let n = tape.rms_norm(x);
            let a = tape.mul_row(n, b.g1);
            let q = tape.matmul(a, b.wq);
            let k = tape.matmul(a, b.wk);
            let v = tape.matmul(a, b.wv);
            let att = tape.causal_attention(q, k, v, self.shape.heads());
            let o = tape.matmul(att, b.wo);
            x = tape.add(x, o);
            let n = tape.rms_norm(x);
            let bn = tape.mul_row(n, b.g2);
            let h = tape.matmul(bn, b.w1);
            let h = tape.add_row(h, b.b1);
            let h = tape.gelu(h);
            let m = tape.matmul(h, b.w2);
            let m = tape.add_row(m, b.b2);
            x = tape.add(x, m);
        }
        let n = tape.rms_norm(x);
        let hidden = tape.mul_row(n, self.gf);
        let logits = tape.matmul(hidden, self.wout);
        let logits = tape.add_row(logits, self.bout);
        Ok((hidden, tape.log_softmax(logits)))
    }

    /// Column of `log pi(continuation_j | context, continuation_<j)`.
    pub fn token_logps(
        &self,
        tape: &mut Tape<'_>,
        context: &[u32],
        continuation: &[u32],
    ) -> Result<Tensor> {
        if context.is_empty() || continuation.is_empty() {
            return Err(validation(
                "token_logps needs non-empty context and continuation",
            ));
        }
        if context.len() + continuation.len() > self.shape.max_context {
            return Err(Error::Length(format!(
                "context {} + continuation {} exceeds max_context {}",
                context.len(),
                continuation.len(),
                self.shape.max_context
            )));
        }
        let mut ids = context.to_vec();
        ids.extend_from_slice(&continuation[..continuation.len() - 1]);
        let (_, logp) = self.forward(tape, &ids)?;
        let c = context.len();
        let at: Vec<(usize, usize)> = continuation
            .iter()
            .enumerate()
            .map(|(j, &y)| (c - 1 + j, y as usize))
            .collect();
        Ok(tape.gather(logp, &at))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad;

    fn small(seed: u64) -> PolicyParams {
        let vocab = Vocab::arithmetic();
        let shape = ModelShape {
            d: 16,
            layers: 2,
            vocab_size: vocab.len(),
            max_context: 24,
        };
        let mut p = PolicyParams::init(shape, &vocab, seed).unwrap();
        // Move away from the uniform start so the outputs are informative.
        let mut rng = CounterRng::new(seed + 100);
        for i in p.output_projection_range() {
            p.values[i] = rng.normal();
        }
        p
    }

    #[test]
    fn uniform_at_init() {
        let vocab = Vocab::arithmetic();
        let p = init_policy(16, 1, &vocab, 3).unwrap();
        let lp = p.log_prob(&[0, 5, 6], &[7, 8, 1]).unwrap();
        for x in lp {
            assert_eq!(x, -(17f64).ln());
        }
        assert!(p.log_prob(&[0], &[]).unwrap().is_empty());
    }

    #[test]
    fn deterministic_init_and_bad_width() {
        let vocab = Vocab::arithmetic();
        assert_eq!(
            init_policy(8, 2, &vocab, 5).unwrap(),
            init_policy(8, 2, &vocab, 5).unwrap()
        );
        assert_ne!(
            init_policy(8, 2, &vocab, 5).unwrap().values,
            init_policy(8, 2, &vocab, 6).unwrap().values
        );
        assert!(matches!(
            init_policy(0, 2, &vocab, 5),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn param_count_inverts() {
        let p = small(1);
        let s = p.shape();
        assert_eq!(
            ModelShape::with_param_count(s.d, s.layers, s.vocab_size, p.len()),
            Some(*s)
        );
    }

    #[test]
    fn tape_and_decoder_agree_bitwise() {
        let p = small(2);
        let ctx = [0u32, 5, 14, 7, 15];
        let cont = [9u32, 16, 4, 1];
        let direct = p.log_prob(&ctx, &cont).unwrap();
        let mut tape = Tape::new(&p.values);
        let m = TapeModel::bind(&p, &mut tape);
        let col = m.token_logps(&mut tape, &ctx, &cont).unwrap();
        assert_eq!(tape.value(col), direct.as_slice());

        let ids: Vec<u32> = ctx.iter().chain(&cont).copied().collect();
        let (h, _) = m.forward(&mut tape, &ids).unwrap();
        let d = p.shape().d;
        let last = &tape.value(h)[(ids.len() - 1) * d..];
        assert_eq!(last, p.final_hidden(&ids).unwrap().as_slice());
    }

    #[test]
    fn distributions_normalised() {
        let p = small(3);
        for ctx in [&[0u32][..], &[0, 4, 5, 6], &[0, 16, 16, 2, 9]] {
            let lp = p.next_logprobs(ctx).unwrap();
            let s: f64 = lp.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn context_overflow_is_length_error() {
        let p = small(4);
        let ctx = vec![4u32; 20];
        assert!(matches!(p.log_prob(&ctx, &[5; 5]), Err(Error::Length(_))));
        assert!(matches!(p.final_hidden(&[]), Err(Error::Validation(_))));
    }

    #[test]
    fn nll_gradient_matches_differences() {
        let p = small(5);
        let batch: [(&[u32], &[u32]); 2] = [(&[0, 5, 14, 6], &[16, 11, 1]), (&[0, 7], &[8, 9])];
        let loss = |values: &[f64]| {
            grad(values, |tape| {
                let m = TapeModel::bind(&p, tape);
                let mut total = tape.scalar(0.0);
                for (c, y) in batch {
                    let lp = m.token_logps(tape, c, y)?;
                    let s = tape.sum(lp);
                    total = tape.add(total, s);
                }
                Ok(tape.scale(total, -0.5))
            })
            .unwrap()
        };
        let (_, g) = loss(&p.values);
        let mut rng = CounterRng::new(77);
        let h = 1e-4;
        let mut checked = 0;
        while checked < 50 {
            let i = rng.below(p.len() as u64) as usize;
            if i >= p.layout.pos && i < p.layout.pos + p.shape.max_context * p.shape.d {
                continue;
            }
            let mut v = p.values.clone();
            v[i] += h;
            let up = loss(&v).0;
            v[i] -= 2.0 * h;
            let down = loss(&v).0;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs());
            if denom < 1e-7 {
                checked += 1;
                continue;
            }
            assert!(
                (fd - g[i]).abs() / denom < 1e-4,
                "coord {i}: {} vs {fd}",
                g[i]
            );
            checked += 1;
        }
    }
}
