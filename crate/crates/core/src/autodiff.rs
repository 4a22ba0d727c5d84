//! A small matrix-valued reverse-mode tape.
//!
//! Every node holds a dense row-major `rows x cols` value. Parameter leaves
//! are views into one flat parameter vector, so [`Tape::backward`] returns
//! a gradient with the same layout.

use crate::error::{Error, Result};
use crate::kernels::{attend_row, gelu, gelu_grad, log_softmax_row, matmul, rms_norm_row};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param {
        offset: usize,
    },
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Min(Tensor, Tensor),
    Scale(Tensor, f64),
    AddRow(Tensor, Tensor),
    MulRow(Tensor, Tensor),
    Exp(Tensor),
    Gelu(Tensor),
    Clamp {
        x: Tensor,
        lo: f64,
        hi: f64,
    },
    RmsNorm {
        x: Tensor,
        inv: Vec<f64>,
    },
    Attention {
        q: Tensor,
        k: Tensor,
        v: Tensor,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
    LogSoftmax(Tensor),
    Rows {
        x: Tensor,
        idx: Vec<usize>,
    },
    Gather {
        x: Tensor,
        at: Vec<(usize, usize)>,
    },
    WeightedSum {
        x: Tensor,
        w: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Tensor(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        let n = &self.nodes[t.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.0].value
    }

    /// Scalar value of a `1 x 1` tensor.
    pub fn scalar_value(&self, t: Tensor) -> f64 {
        self.nodes[t.0].value[0]
    }

    /// A `rows x cols` view of the parameters starting at `offset`.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Tensor {
        let value = self.params[offset..offset + rows * cols].to_vec();
        self.push(rows, cols, value, Op::Param { offset })
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Tensor {
        assert_eq!(value.len(), rows * cols, "constant shape mismatch");
        self.push(rows, cols, value, Op::Const)
    }

    pub fn column(&mut self, value: Vec<f64>) -> Tensor {
        let n = value.len();
        self.constant(n, 1, value)
    }

    pub fn scalar(&mut self, v: f64) -> Tensor {
        self.constant(1, 1, vec![v])
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let value = matmul(self.value(a), self.value(b), m, k, n);
        self.push(m, n, value, Op::MatMul(a, b))
    }

    fn zip(&mut self, a: Tensor, b: Tensor, f: impl Fn(f64, f64) -> f64, op: Op) -> Tensor {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "elementwise shape mismatch");
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(r, c, value, op)
    }

    fn map(&mut self, a: Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(r, c, value, op)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties take the gradient of `a`.
    pub fn min(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip(a, b, f64::min, Op::Min(a, b))
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Tensor) -> Tensor {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn gelu(&mut self, a: Tensor) -> Tensor {
        self.map(a, gelu, Op::Gelu(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, a: Tensor, lo: f64, hi: f64) -> Tensor {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp { x: a, lo, hi })
    }

    fn broadcast_row(
        &mut self,
        a: Tensor,
        row: Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Tensor {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "row broadcast shape");
        let rv = self.value(row);
        let value = self
            .value(a)
            .chunks(c)
            .flat_map(|x| x.iter().zip(rv).map(|(x, y)| f(*x, *y)))
            .collect();
        self.push(r, c, value, op)
    }

    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Tensor {
        self.broadcast_row(a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Tensor, row: Tensor) -> Tensor {
        self.broadcast_row(a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    /// Row-wise RMS normalisation without gain.
    pub fn rms_norm(&mut self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let mut value = self.value(a).to_vec();
        let inv = value.chunks_mut(c).map(rms_norm_row).collect();
        self.push(r, c, value, Op::RmsNorm { x: a, inv })
    }

    /// Causal multi-head self-attention over the rows of `q`, `k`, `v`.
    pub fn causal_attention(&mut self, q: Tensor, k: Tensor, v: Tensor, heads: usize) -> Tensor {
        let (t, d) = self.shape(q);
        assert_eq!(self.shape(k), (t, d));
        assert_eq!(self.shape(v), (t, d));
        assert_eq!(d % heads, 0, "heads must divide width");
        let mut value = vec![0.0; t * d];
        let mut probs = Vec::with_capacity(t);
        for row in 0..t {
            let mut p = vec![0.0; heads * (row + 1)];
            attend_row(
                &self.nodes[q.0].value[row * d..(row + 1) * d],
                &self.nodes[k.0].value,
                &self.nodes[v.0].value,
                row,
                heads,
                &mut value[row * d..(row + 1) * d],
                Some(&mut p),
            );
            probs.push(p);
        }
        self.push(
            t,
            d,
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    pub fn log_softmax(&mut self, a: Tensor) -> Tensor {
        let (r, c) = self.shape(a);
        let mut value = vec![0.0; r * c];
        for (x, out) in self.value(a).chunks(c).zip(value.chunks_mut(c)) {
            log_softmax_row(x, out);
        }
        self.push(r, c, value, Op::LogSoftmax(a))
    }

    /// Select rows of `a` (an embedding lookup when `a` is a table).
    pub fn rows(&mut self, a: Tensor, idx: &[usize]) -> Tensor {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut value = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "row index {i} out of range {r}");
            value.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(
            idx.len(),
            c,
            value,
            Op::Rows {
                x: a,
                idx: idx.to_vec(),
            },
        )
    }

    /// Pick single entries into a column vector.
    pub fn gather(&mut self, a: Tensor, at: &[(usize, usize)]) -> Tensor {
        let (_, c) = self.shape(a);
        let src = self.value(a);
        let value = at.iter().map(|&(r, k)| src[r * c + k]).collect();
        self.push(
            at.len(),
            1,
            value,
            Op::Gather {
                x: a,
                at: at.to_vec(),
            },
        )
    }

    /// `sum_k w_k * a_k` as a `1 x 1` tensor.
    pub fn weighted_sum(&mut self, a: Tensor, w: &[f64]) -> Tensor {
        assert_eq!(self.value(a).len(), w.len(), "weight length");
        let s = self.value(a).iter().zip(w).map(|(x, y)| x * y).sum();
        self.push(
            1,
            1,
            vec![s],
            Op::WeightedSum {
                x: a,
                w: w.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let w = vec![1.0; self.value(a).len()];
        self.weighted_sum(a, &w)
    }

    /// Reverse pass from a `1 x 1` node; returns the gradient with respect
    /// to the parameter vector.
    pub fn backward(&self, loss: Tensor) -> Vec<f64> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut pgrad = vec![0.0; self.params.len()];
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];
        for id in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[id]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[id];
            let mut acc = |t: Tensor, delta: &[f64]| {
                let slot = &mut grads[t.0];
                if slot.is_empty() {
                    *slot = delta.to_vec();
                } else {
                    slot.iter_mut().zip(delta).for_each(|(s, d)| *s += d);
                }
            };
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    pgrad[*offset..offset + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(p, d)| *p += d);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    let bt = transpose(self.value(*b), k, n);
                    acc(*a, &matmul(&g, &bt, m, n, k));
                    let at = transpose(self.value(*a), m, k);
                    acc(*b, &matmul(&at, &g, k, m, n));
                }
                Op::Add(a, b) => {
                    acc(*a, &g);
                    acc(*b, &g);
                }
                Op::Sub(a, b) => {
                    acc(*a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(*b, &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    acc(*a, &da);
                    acc(*b, &db);
                }
                Op::Min(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = vec![0.0; g.len()];
                    let mut db = vec![0.0; g.len()];
                    for i in 0..g.len() {
                        if va[i] <= vb[i] {
                            da[i] = g[i];
                        } else {
                            db[i] = g[i];
                        }
                    }
                    acc(*a, &da);
                    acc(*b, &db);
                }
                Op::Scale(a, c) => {
                    let d: Vec<f64> = g.iter().map(|x| x * c).collect();
                    acc(*a, &d);
                }
                Op::AddRow(a, row) => {
                    acc(*a, &g);
                    acc(*row, &col_sums(&g, node.cols));
                }
                Op::MulRow(a, row) => {
                    let c = node.cols;
                    let rv = self.value(*row);
                    let va = self.value(*a);
                    let da: Vec<f64> = g.iter().enumerate().map(|(i, g)| g * rv[i % c]).collect();
                    let prod: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    acc(*a, &da);
                    acc(*row, &col_sums(&prod, c));
                }
                Op::Exp(a) => {
                    let d: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * y).collect();
                    acc(*a, &d);
                }
                Op::Gelu(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(g, x)| g * gelu_grad(*x))
                        .collect();
                    acc(*a, &d);
                }
                Op::Clamp { x, lo, hi } => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(g, v)| if *v > *lo && *v < *hi { *g } else { 0.0 })
                        .collect();
                    acc(*x, &d);
                }
                Op::RmsNorm { x, inv } => {
                    let c = node.cols;
                    let mut d = vec![0.0; g.len()];
                    for (r, &s) in inv.iter().enumerate() {
                        let y = &node.value[r * c..(r + 1) * c];
                        let gy = &g[r * c..(r + 1) * c];
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for k in 0..c {
                            d[r * c + k] = s * (gy[k] - y[k] * dot);
                        }
                    }
                    acc(*x, &d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (dq, dk, dv) = attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        probs,
                        &g,
                        node.rows,
                        node.cols,
                        *heads,
                    );
                    acc(*q, &dq);
                    acc(*k, &dk);
                    acc(*v, &dv);
                }
                Op::LogSoftmax(a) => {
                    let c = node.cols;
                    let mut d = vec![0.0; g.len()];
                    for r in 0..node.rows {
                        let gy = &g[r * c..(r + 1) * c];
                        let s: f64 = gy.iter().sum();
                        for k in 0..c {
                            d[r * c + k] = gy[k] - node.value[r * c + k].exp() * s;
                        }
                    }
                    acc(*a, &d);
                }
                Op::Rows { x, idx } => {
                    let (r, c) = self.shape(*x);
                    let mut d = vec![0.0; r * c];
                    for (out_row, &i) in idx.iter().enumerate() {
                        for k in 0..c {
                            d[i * c + k] += g[out_row * c + k];
                        }
                    }
                    acc(*x, &d);
                }
                Op::Gather { x, at } => {
                    let (r, c) = self.shape(*x);
                    let mut d = vec![0.0; r * c];
                    for (gi, &(rr, k)) in g.iter().zip(at) {
                        d[rr * c + k] += gi;
                    }
                    acc(*x, &d);
                }
                Op::WeightedSum { x, w } => {
                    let d: Vec<f64> = w.iter().map(|w| w * g[0]).collect();
                    acc(*x, &d);
                }
            }
        }
        pgrad
    }
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

fn col_sums(g: &[f64], c: usize) -> Vec<f64> {
    let mut s = vec![0.0; c];
    for row in g.chunks(c) {
        s.iter_mut().zip(row).for_each(|(s, x)| *s += x);
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[Vec<f64>],
    g: &[f64],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (vec![0.0; t * d], vec![0.0; t * d], vec![0.0; t * d]);
    for (row, p_row) in probs.iter().enumerate() {
        let n = row + 1;
        for h in 0..heads {
            let lo = h * dh;
            let p = &p_row[h * n..(h + 1) * n];
            let go = &g[row * d + lo..row * d + lo + dh];
            // dP_s = go . v_s ; dS = P * (dP - sum P dP)
            let dp: Vec<f64> = (0..n)
                .map(|s| {
                    go.iter()
                        .zip(&v[s * d + lo..s * d + lo + dh])
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            let pdp: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for s in 0..n {
                for (dvv, gg) in dv[s * d + lo..s * d + lo + dh].iter_mut().zip(go) {
                    *dvv += p[s] * gg;
                }
                let ds = p[s] * (dp[s] - pdp) * scale;
                if ds == 0.0 {
                    continue;
                }
                for e in 0..dh {
                    dq[row * d + lo + e] += ds * k[s * d + lo + e];
                    dk[s * d + lo + e] += ds * q[row * d + lo + e];
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Evaluate `build` on a fresh tape and return the scalar loss with its
/// gradient with respect to `params`.
pub fn grad<F>(params: &[f64], build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Tensor>,
{
    let mut tape = Tape::new(params);
    let loss = build(&mut tape)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    Ok((value, tape.backward(loss)))
}
