//! The full verification pass run by `gcpo scm-verify`.

use serde::{Deserialize, Serialize};

use super::projection::{context_vars, phi_vars, DELTA_TOL, IDENTITY_TOL};
use super::*;
use crate::rng::{derive_seed, CounterRng};

/// Tolerance for the projection algebra (idempotence, orthogonality, ...).
pub const ALGEBRA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    /// Random predictors per SCM for the risk-gap sweeps.
    pub perturbations: usize,
    /// Random test functions for the algebra checks.
    pub algebra_functions: usize,
    /// Scale of the random perturbations added to the Bayes predictor.
    pub perturbation_scale: f64,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            perturbations: 100,
            algebra_functions: 8,
            perturbation_scale: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed error (or the measured quantity).
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub n: usize,
    pub cells: usize,
    pub cmi_given_q: f64,
    pub cmi_given_q_yn: f64,
    /// Report for the exact Bayes predictor `E[y_0 | x]`.
    pub projection_gap_bayes: ProjectionReport,
    pub baseline_gap_bayes: ProjectionReport,
    /// Sweep report with the largest identity gap.
    pub projection_gap_worst: ProjectionReport,
    pub baseline_gap_worst: ProjectionReport,
    pub checks: Vec<SuiteCheck>,
    pub passed: bool,
}

fn random_predictor(
    table: &JointTable,
    vars: &[Var],
    rng: &mut CounterRng,
    scale: f64,
) -> Result<Predictor> {
    Predictor::from_fn(table, vars, |_| scale * rng.normal())
}

fn max_abs_diff(a: &Predictor, b: &Predictor, table: &JointTable) -> f64 {
    table
        .support()
        .map(|(c, _)| (a.at_cell(table, c) - b.at_cell(table, c)).abs())
        .fold(0.0, f64::max)
}

fn check(name: &str, value: f64, tolerance: f64, ok: bool) -> SuiteCheck {
    SuiteCheck {
        name: name.to_string(),
        passed: ok,
        value,
        tolerance,
    }
}

fn worst(reports: &[ProjectionReport]) -> ProjectionReport {
    *reports
        .iter()
        .max_by(|a, b| a.identity_gap.total_cmp(&b.identity_gap))
        .expect("non-empty sweep")
}

/// Run projection algebra, risk-gap sweeps and the
/// conditional-independence checks on one joint table.
pub fn run_suite(table: &JointTable, opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut rng = CounterRng::new(derive_seed(opts.seed, &[table.probs.len() as u64]));
    let all_vars = table.vars();
    let mut checks = Vec::new();

    // Projection algebra on random functions of every variable.
    let (mut idem, mut psi_phi, mut orth, mut pyth) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..opts.algebra_functions {
        let f = random_predictor(table, &all_vars, &mut rng, 1.0)?;
        let g = random_predictor(table, &all_vars, &mut rng, 1.0)?;
        let phi_f = project_phi(&f, table)?;
        let phi_phi_f = project_phi(&phi_f, table)?;
        idem = idem.max(max_abs_diff(&phi_phi_f, &phi_f, table));
        let psi_phi_f = project_psi(&phi_f, table)?;
        psi_phi = psi_phi.max(
            table
                .support()
                .map(|(c, _)| psi_phi_f.at_cell(table, c).abs())
                .fold(0.0, f64::max),
        );
        let psi_g = project_psi(&g, table)?;
        orth = orth.max(inner_product(&phi_f, &psi_g, table).abs());
        let psi_f = project_psi(&f, table)?;
        let lhs = norm_sq(&f, table);
        let rhs = norm_sq(&phi_f, table) + norm_sq(&psi_f, table);
        pyth = pyth.max((lhs - rhs).abs());
    }
    checks.push(check(
        "phi_idempotent",
        idem,
        ALGEBRA_TOL,
        idem <= ALGEBRA_TOL,
    ));
    checks.push(check(
        "psi_after_phi_is_zero",
        psi_phi,
        ALGEBRA_TOL,
        psi_phi <= ALGEBRA_TOL,
    ));
    checks.push(check(
        "phi_psi_orthogonal",
        orth,
        ALGEBRA_TOL,
        orth <= ALGEBRA_TOL,
    ));
    checks.push(check("pythagoras", pyth, ALGEBRA_TOL, pyth <= ALGEBRA_TOL));

    // Conditional-mean condition for the Bayes predictor.
    let x = context_vars(table);
    let fstar = bayes_predictor(table, Var::Response(0), &x)?;
    let b = query_baseline(table)?;
    let resid = project_phi(&fstar.sub(&b, table)?, table)?;
    let mut eq1 = 0.0f64;
    let pv = phi_vars(table);
    let mut mass = vec![0.0; resid.values().len()];
    for (cell, p) in table.support() {
        let idx = pv
            .iter()
            .fold(0, |acc, &v| acc * table.card(v) + table.value(cell, v));
        mass[idx] += p;
    }
    for (v, m) in resid.values().iter().zip(&mass) {
        if *m > 0.0 {
            eq1 = eq1.max(v.abs());
        }
    }
    checks.push(check(
        "bayes_conditional_mean_matches_baseline",
        eq1,
        ALGEBRA_TOL,
        eq1 <= ALGEBRA_TOL,
    ));

    // Projection gap for arbitrary perturbations of the Bayes predictor.
    let mut t1 = Vec::with_capacity(opts.perturbations);
    let mut c2_general_gap = 0.0f64;
    let psi_star = project_psi(&fstar, table)?;
    let psi_star_sq = norm_sq(&psi_star, table);
    for _ in 0..opts.perturbations {
        let e = random_predictor(table, &x, &mut rng, opts.perturbation_scale)?;
        let f = fstar.add(&e, table)?;
        t1.push(verify_projection_gap(&f, table)?);
        // Exact form of the baseline gap for a general predictor.
        let c2 = verify_baseline_gap(&f, table)?;
        let expected = psi_star_sq - norm_sq(&project_psi(&e, table)?, table);
        c2_general_gap = c2_general_gap.max((c2.delta - expected).abs());
    }
    let t1_ok = t1
        .iter()
        .all(|r| r.delta >= -DELTA_TOL && r.identity_gap <= IDENTITY_TOL);
    let t1_worst = worst(&t1);
    checks.push(check(
        "projection_gap_identity",
        t1_worst.identity_gap,
        IDENTITY_TOL,
        t1_ok,
    ));
    checks.push(check(
        "baseline_gap_general_form",
        c2_general_gap,
        IDENTITY_TOL,
        c2_general_gap <= IDENTITY_TOL,
    ));

    // Baseline gap where Ψf = Ψf*.
    let mut c2 = Vec::with_capacity(opts.perturbations);
    for _ in 0..opts.perturbations {
        let e = random_predictor(table, &pv, &mut rng, opts.perturbation_scale)?;
        let f = fstar.add(&e, table)?;
        c2.push(verify_baseline_gap(&f, table)?);
    }
    let c2_ok = c2
        .iter()
        .all(|r| r.delta >= -DELTA_TOL && r.identity_gap <= IDENTITY_TOL);
    let c2_worst = worst(&c2);
    checks.push(check(
        "baseline_gap_identity",
        c2_worst.identity_gap,
        IDENTITY_TOL,
        c2_ok,
    ));

    let (cmi_given_q, cmi_given_q_yn) = verify_collider_dependence(table);
    checks.push(check(
        "fork_independence",
        cmi_given_q,
        ALGEBRA_TOL,
        cmi_given_q <= ALGEBRA_TOL,
    ));

    let projection_gap_bayes = verify_projection_gap(&fstar, table)?;
    let baseline_gap_bayes = verify_baseline_gap(&fstar, table)?;
    checks.push(check(
        "projection_gap_bayes",
        projection_gap_bayes.identity_gap,
        IDENTITY_TOL,
        projection_gap_bayes.holds,
    ));
    checks.push(check(
        "baseline_gap_bayes",
        baseline_gap_bayes.identity_gap,
        IDENTITY_TOL,
        baseline_gap_bayes.holds,
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport {
        n: table.n(),
        cells: table.probs.len(),
        cmi_given_q,
        cmi_given_q_yn,
        projection_gap_bayes,
        baseline_gap_bayes,
        projection_gap_worst: t1_worst,
        baseline_gap_worst: c2_worst,
        checks,
        passed,
    })
}
