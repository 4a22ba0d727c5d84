use serde::{Deserialize, Serialize};

use super::{JointTable, Predictor, Var};
use crate::error::{validation, Error, Result};

/// Tolerance on the risk gap sign.
pub const DELTA_TOL: f64 = 1e-10;
/// Tolerance on the closed-form identities.
pub const IDENTITY_TOL: f64 = 1e-8;

/// `E[target | given]` with the target coded by its integer value.
pub fn cond_expect(table: &JointTable, target: Var, given: &[(Var, usize)]) -> Result<f64> {
    let coding: Vec<f64> = (0..table.card(target)).map(|v| v as f64).collect();
    cond_expect_coded(table, target, &coding, given)
}

/// `E[coding(target) | given]` for an explicit value map.
pub fn cond_expect_coded(
    table: &JointTable,
    target: Var,
    coding: &[f64],
    given: &[(Var, usize)],
) -> Result<f64> {
    if !table.contains(target) {
        return Err(validation(format!("target {target} is not in the SCM")));
    }
    if coding.len() != table.card(target) {
        return Err(validation(
            "value map length differs from target cardinality",
        ));
    }
    if let Some((v, _)) = given
        .iter()
        .find(|(v, x)| !table.contains(*v) || *x >= table.card(*v))
    {
        return Err(validation(format!(
            "invalid conditioning assignment for {v}"
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (cell, p) in table.support() {
        if given.iter().all(|&(v, x)| table.value(cell, v) == x) {
            num += p * coding[table.value(cell, target)];
            den += p;
        }
    }
    if den <= 0.0 {
        return Err(Error::Conditioning(format!(
            "conditioning event {given:?} has zero probability"
        )));
    }
    Ok(num / den)
}

/// `E[f | vars]` as a predictor on `vars`. Assignments with zero mass are
/// measure-zero and take the value 0.
pub fn conditional_projection(
    f: &Predictor,
    table: &JointTable,
    vars: &[Var],
) -> Result<Predictor> {
    let proto = Predictor::from_fn(table, vars, |_| 0.0)?;
    let mut num = vec![0.0; proto.values().len()];
    let mut den = vec![0.0; proto.values().len()];
    let strides = strides_of(proto.cards());
    for (cell, p) in table.support() {
        let idx: usize = proto
            .conditioning()
            .iter()
            .zip(&strides)
            .map(|(&v, &s)| table.value(cell, v) * s)
            .sum();
        num[idx] += p * f.at_cell(table, cell);
        den[idx] += p;
    }
    let values = num
        .iter()
        .zip(&den)
        .map(|(&a, &d)| if d > 0.0 { a / d } else { 0.0 })
        .collect();
    Predictor::from_values(
        proto.conditioning().to_vec(),
        proto.cards().to_vec(),
        values,
    )
}

fn strides_of(cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1; cards.len()];
    for a in (0..cards.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * cards[a + 1];
    }
    s
}

/// The variables `Φ` conditions on: `q, y_1, .., y_{n-1}`.
pub fn phi_vars(table: &JointTable) -> Vec<Var> {
    std::iter::once(Var::Query)
        .chain((1..table.n()).map(Var::Response))
        .collect()
}

/// The context `x = (q, y_1, .., y_n)` that `y_0` is predicted from.
pub fn context_vars(table: &JointTable) -> Vec<Var> {
    std::iter::once(Var::Query)
        .chain((1..=table.n()).map(Var::Response))
        .collect()
}

/// `Φf = E[f | q, y_1..y_{n-1}]`.
pub fn project_phi(f: &Predictor, table: &JointTable) -> Result<Predictor> {
    conditional_projection(f, table, &phi_vars(table))
}

/// `Ψf = f - Φf`, on the union of f's index set and Φ's.
pub fn project_psi(f: &Predictor, table: &JointTable) -> Result<Predictor> {
    let phi = project_phi(f, table)?;
    f.sub(&phi, table)
}

/// Exact `E[target | vars]` with integer coding.
pub fn bayes_predictor(table: &JointTable, target: Var, vars: &[Var]) -> Result<Predictor> {
    let y = Predictor::indicator_of(table, target)?;
    conditional_projection(&y, table, vars)
}

/// `b(q) = E[y_0 | q]`.
pub fn query_baseline(table: &JointTable) -> Result<Predictor> {
    bayes_predictor(table, Var::Response(0), &[Var::Query])
}

/// `E[g^2]` over the joint table.
pub fn norm_sq(g: &Predictor, table: &JointTable) -> f64 {
    table
        .support()
        .map(|(c, p)| p * g.at_cell(table, c).powi(2))
        .sum()
}

/// `E[g h]` over the joint table.
pub fn inner_product(g: &Predictor, h: &Predictor, table: &JointTable) -> f64 {
    table
        .support()
        .map(|(c, p)| p * g.at_cell(table, c) * h.at_cell(table, c))
        .sum()
}

/// Squared-error risk gap `E[(Y - f1)^2] - E[(Y - f2)^2]`.
pub fn risk_delta(f1: &Predictor, f2: &Predictor, table: &JointTable, target: Var) -> f64 {
    table
        .support()
        .map(|(c, p)| {
            let y = table.value(c, target) as f64;
            let a = f1.at_cell(table, c);
            let b = f2.at_cell(table, c);
            p * ((y - a).powi(2) - (y - b).powi(2))
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub delta: f64,
    pub phi_residual_sq: f64,
    pub psi_norm_sq: f64,
    pub holds: bool,
    pub identity_gap: f64,
}

struct Parts {
    baseline: Predictor,
    projected: Predictor,
    phi_residual_sq: f64,
    psi_norm_sq: f64,
}

fn decompose(f: &Predictor, table: &JointTable) -> Result<Parts> {
    let x = context_vars(table);
    if !f.is_measurable_in(&x) {
        return Err(validation(format!(
            "predictor conditions on {:?}, which is not a subset of (q, y1..yn)",
            f.conditioning()
        )));
    }
    let baseline = query_baseline(table)?;
    let phi = project_phi(f, table)?;
    let psi = f.sub(&phi, table)?;
    let projected = psi.add(&baseline, table)?;
    let phi_residual_sq = norm_sq(&phi.sub(&baseline, table)?, table);
    let psi_norm_sq = norm_sq(&psi, table);
    Ok(Parts {
        baseline,
        projected,
        phi_residual_sq,
        psi_norm_sq,
    })
}

/// Risk gap of `f` against its projected form `Ψf + b`, checked against
/// `‖Φf - b‖²`.
pub fn verify_projection_gap(f: &Predictor, table: &JointTable) -> Result<ProjectionReport> {
    let parts = decompose(f, table)?;
    let delta = risk_delta(f, &parts.projected, table, Var::Response(0));
    let identity_gap = (delta - parts.phi_residual_sq).abs();
    Ok(ProjectionReport {
        delta,
        phi_residual_sq: parts.phi_residual_sq,
        psi_norm_sq: parts.psi_norm_sq,
        holds: delta >= -DELTA_TOL && identity_gap <= IDENTITY_TOL,
        identity_gap,
    })
}

/// Risk gap of the query baseline `b` against `Ψf + b`, checked against
/// `‖Ψf‖²`.
///
/// The identity is exact when `Ψf = Ψf*` for the Bayes predictor
/// `f* = E[y_0 | x]`, e.g. `f = f*` or `f*` plus a `(q, y_1..y_{n-1})`
/// measurable term. For general `f` the gap equals
/// `‖Ψf*‖² - ‖Ψ(f - f*)‖²` instead and may be negative; the report says so
/// through `holds = false`.
pub fn verify_baseline_gap(f: &Predictor, table: &JointTable) -> Result<ProjectionReport> {
    let parts = decompose(f, table)?;
    let delta = risk_delta(&parts.baseline, &parts.projected, table, Var::Response(0));
    let identity_gap = (delta - parts.psi_norm_sq).abs();
    Ok(ProjectionReport {
        delta,
        phi_residual_sq: parts.phi_residual_sq,
        psi_norm_sq: parts.psi_norm_sq,
        holds: delta >= -DELTA_TOL && identity_gap <= IDENTITY_TOL,
        identity_gap,
    })
}
