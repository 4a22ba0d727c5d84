//! AdamW with decoupled weight decay and the learning-rate schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::config::Schedule;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One descent step: `p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
///
/// `grad` is the gradient of the loss to minimise. Decay is applied even
/// where the gradient is zero, so `lr = 0` leaves `params` untouched.
pub fn optimizer_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Size(format!(
            "optimizer shapes differ: {} params, {} grads, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t as i32);
    let c2 = 1.0 - BETA2.powi(state.t as i32);
    let decay = 1.0 - lr * weight_decay;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        *p = *p * decay - lr * update;
    }
    Ok(())
}

/// Scale `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: Option<f64>) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if let Some(limit) = max_norm {
        if norm > limit {
            let s = limit / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Learning rate at `step` of `total`: linear warmup over
/// `ceil(warmup_ratio * total)` steps, then constant or cosine decay to zero.
pub fn lr_at(schedule: Schedule, base: f64, step: usize, total: usize, warmup_ratio: f64) -> f64 {
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let span = total.saturating_sub(warmup).max(1);
            let progress = (step - warmup) as f64 / span as f64;
            0.5 * base * (1.0 + (PI * progress).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = vec![0.5, -1.25, 3.0];
        let orig = p.clone();
        let mut s = AdamState::new(3);
        optimizer_step(&mut p, &[0.0; 3], &mut s, 0.1, 0.0).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = vec![0.5, -1.25];
        let mut s = AdamState::new(2);
        optimizer_step(&mut p, &[1.0, -2.0], &mut s, 0.0, 0.01).unwrap();
        assert_eq!(p, vec![0.5, -1.25]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, 1.0];
        let mut s = AdamState::new(2);
        optimizer_step(&mut p, &[4.0, -0.25], &mut s, 0.01, 0.0).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
        let mut p2 = vec![1.0, 1.0];
        let mut s2 = AdamState::new(2);
        optimizer_step(&mut p2, &[4.0, -0.25], &mut s2, 0.01, 0.0).unwrap();
        assert_eq!(p, p2);
        assert!(optimizer_step(&mut p, &[1.0], &mut s, 0.01, 0.0).is_err());
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![2.0];
        let mut s = AdamState::new(1);
        optimizer_step(&mut p, &[0.0], &mut s, 0.5, 0.1).unwrap();
        assert_eq!(p[0], 2.0 * 0.95);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, Some(1.0)), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut g = vec![0.3, 0.4];
        assert!((clip_grad_norm(&mut g, Some(1.0)) - 0.5).abs() < 1e-15);
        assert_eq!(g, vec![0.3, 0.4]);
    }

    #[test]
    fn schedules() {
        assert_eq!(lr_at(Schedule::Constant, 0.1, 7, 10, 0.0), 0.1);
        assert!((lr_at(Schedule::Constant, 0.1, 0, 10, 0.2) - 0.05).abs() < 1e-15);
        assert_eq!(lr_at(Schedule::Constant, 0.1, 2, 10, 0.2), 0.1);
        assert_eq!(lr_at(Schedule::Cosine, 0.1, 0, 10, 0.0), 0.1);
        assert!((lr_at(Schedule::Cosine, 0.1, 5, 10, 0.0) - 0.05).abs() < 1e-15);
        assert!(lr_at(Schedule::Cosine, 0.1, 9, 10, 0.0) < 0.01);
    }
}
