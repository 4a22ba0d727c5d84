//! Row-oriented numeric kernels shared by the taped forward pass and the
//! cached decoder. Every output row depends only on its own inputs and is
//! accumulated in a fixed order, so computing one row at a time gives the
//! same bits as computing the whole matrix.

pub(crate) const RMS_EPS: f64 = 1e-5;

/// `out[m x n] = a[m x k] * b[k x n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        matmul_row(&a[i * k..(i + 1) * k], b, n, &mut out[i * n..(i + 1) * n]);
    }
    out
}

/// One row of [`matmul`]: `out[n] = a[k] * b[k x n]`.
pub(crate) fn matmul_row(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for (kk, &av) in a.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let brow = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// Normalises `x` in place by its root mean square; returns `1 / rms`.
pub(crate) fn rms_norm_row(x: &mut [f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter_mut().for_each(|v| *v *= inv);
    inv
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Log-softmax of one row with max subtraction.
pub(crate) fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for (o, v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// Causal multi-head attention for the query row at position `t`.
///
/// `keys` and `vals` hold at least `t + 1` rows of width `d`. Writes the
/// attended row to `out` and, if given, the attention weights of each head
/// (`heads x (t + 1)`) to `probs`.
pub(crate) fn attend_row(
    q: &[f64],
    keys: &[f64],
    vals: &[f64],
    t: usize,
    heads: usize,
    out: &mut [f64],
    mut probs: Option<&mut [f64]>,
) {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut w = vec![0.0; t + 1];
    for h in 0..heads {
        let lo = h * dh;
        let qh = &q[lo..lo + dh];
        let mut m = f64::NEG_INFINITY;
        for (s, ws) in w.iter_mut().enumerate() {
            let kh = &keys[s * d + lo..s * d + lo + dh];
            *ws = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
            m = m.max(*ws);
        }
        let mut z = 0.0;
        for ws in w.iter_mut() {
            *ws = (*ws - m).exp();
            z += *ws;
        }
        let oh = &mut out[lo..lo + dh];
        oh.iter_mut().for_each(|o| *o = 0.0);
        for (s, ws) in w.iter_mut().enumerate() {
            *ws /= z;
            let vh = &vals[s * d + lo..s * d + lo + dh];
            for (o, v) in oh.iter_mut().zip(vh) {
                *o += *ws * v;
            }
        }
        if let Some(p) = probs.as_deref_mut() {
            p[h * (t + 1)..(h + 1) * (t + 1)].copy_from_slice(&w);
        }
    }
}
