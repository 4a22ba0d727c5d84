//! Exact-enumeration laboratory for the query / response / collider SCM.
//!
//! The graph is fixed: a query `q` fans out to `n` responses
//! `y_0 .. y_{n-1}`, which are conditionally independent given `q`, and a
//! final output `y_n` depends on `q` and every response. Small discrete
//! instances are enumerated into a dense [`JointTable`], on which the
//! conditional-expectation projection `Φ`, its complement `Ψ = Id - Φ`,
//! squared-error risk gaps and conditional mutual information are all
//! computed exactly.

mod cmi;
mod file;
mod predictor;
mod projection;
mod suite;

pub use cmi::{conditional_mutual_information, verify_collider_dependence};
pub use file::{parse_scm, read_scm_file, scm_to_text};
pub use predictor::Predictor;
pub use projection::{
    bayes_predictor, cond_expect, cond_expect_coded, conditional_projection, context_vars,
    inner_product, norm_sq, phi_vars, project_phi, project_psi, query_baseline, risk_delta,
    verify_baseline_gap, verify_projection_gap, ProjectionReport,
};
pub use suite::{run_suite, SuiteCheck, SuiteOptions, SuiteReport};

use crate::error::{validation, Error, Result};
use crate::rng::CounterRng;

/// Default cap on the number of joint-table cells.
pub const DEFAULT_CELL_BUDGET: usize = 10_000_000;

const ROW_TOL: f64 = 1e-12;

/// A variable of the SCM. `Response(n)` is the collider output `y_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Query,
    Response(usize),
}

impl Var {
    /// Position in the joint table's dimension list.
    pub fn axis(self) -> usize {
        match self {
            Var::Query => 0,
            Var::Response(i) => i + 1,
        }
    }

    pub fn from_axis(axis: usize) -> Self {
        if axis == 0 {
            Var::Query
        } else {
            Var::Response(axis - 1)
        }
    }
}

impl std::fmt::Display for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Var::Query => write!(f, "q"),
            Var::Response(i) => write!(f, "y{i}"),
        }
    }
}

/// A discrete fork-collider SCM.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteScm {
    pub query_card: usize,
    pub response_card: usize,
    pub n: usize,
    pub query_prior: Vec<f64>,
    /// `response_kernel[q][y]` = p(y_i = y | q), shared by every response.
    pub response_kernel: Vec<Vec<f64>>,
    /// Rows indexed by `(q, y_0, .., y_{n-1})` in mixed radix, `q` most
    /// significant; columns are values of `y_n`.
    pub collider_kernel: Vec<Vec<f64>>,
}

impl FiniteScm {
    /// Number of collider-kernel rows, `query_card * response_card^n`.
    pub fn collider_rows(&self) -> usize {
        self.query_card * self.response_card.pow(self.n as u32)
    }

    /// Row index for `(q, ys)` in the collider kernel.
    pub fn collider_row(&self, q: usize, ys: &[usize]) -> usize {
        ys.iter().fold(q, |acc, &y| acc * self.response_card + y)
    }

    pub fn validate(&self) -> Result<()> {
        if self.query_card == 0 || self.response_card == 0 {
            return Err(validation("cardinalities must be positive"));
        }
        if self.n < 2 {
            return Err(validation(format!("n must be at least 2, got {}", self.n)));
        }
        check_row("query_prior", &self.query_prior, self.query_card)?;
        if self.response_kernel.len() != self.query_card {
            return Err(validation(format!(
                "response_kernel has {} rows, expected {}",
                self.response_kernel.len(),
                self.query_card
            )));
        }
        for (q, row) in self.response_kernel.iter().enumerate() {
            check_row(&format!("response_kernel[{q}]"), row, self.response_card)?;
        }
        if self.collider_kernel.len() != self.collider_rows() {
            return Err(validation(format!(
                "collider_kernel has {} rows, expected {}",
                self.collider_kernel.len(),
                self.collider_rows()
            )));
        }
        for (r, row) in self.collider_kernel.iter().enumerate() {
            check_row(&format!("collider_kernel[{r}]"), row, self.response_card)?;
        }
        Ok(())
    }

    /// Build an SCM whose collider output is a deterministic function of
    /// `(q, y_0..y_{n-1})`.
    pub fn with_deterministic_collider(
        query_prior: Vec<f64>,
        response_kernel: Vec<Vec<f64>>,
        n: usize,
        collider: impl Fn(usize, &[usize]) -> usize,
    ) -> Result<Self> {
        let query_card = query_prior.len();
        let response_card = response_kernel.first().map_or(0, Vec::len);
        let mut scm = FiniteScm {
            query_card,
            response_card,
            n,
            query_prior,
            response_kernel,
            collider_kernel: Vec::new(),
        };
        let rows = scm.collider_rows();
        let mut kernel = Vec::with_capacity(rows);
        let mut ys = vec![0usize; n];
        for row in 0..rows {
            let mut rest = row;
            for slot in ys.iter_mut().rev() {
                *slot = rest % response_card;
                rest /= response_card;
            }
            let out = collider(rest, &ys);
            if out >= response_card {
                return Err(validation(format!("collider value {out} out of range")));
            }
            let mut p = vec![0.0; response_card];
            p[out] = 1.0;
            kernel.push(p);
        }
        scm.collider_kernel = kernel;
        scm.validate()?;
        Ok(scm)
    }

    /// Binary `q`, `n` fair independent bits, collider = XOR of the bits.
    pub fn xor(n: usize) -> Result<Self> {
        Self::with_deterministic_collider(vec![0.5, 0.5], vec![vec![0.5, 0.5]; 2], n, |_, ys| {
            ys.iter().fold(0, |acc, &y| acc ^ y)
        })
    }

    /// Member `index` of a seeded sweep: `n` in 2..=3, cardinalities in
    /// 2..=4, rows drawn by [`FiniteScm::random`].
    pub fn sweep_member(seed: u64, index: u64) -> Result<Self> {
        let key = crate::rng::derive_seed(seed, &[index]);
        let mut rng = CounterRng::new(key);
        let n = 2 + rng.below(2) as usize;
        let query_card = 2 + rng.below(3) as usize;
        let response_card = 2 + rng.below(3) as usize;
        Self::random(
            query_card,
            response_card,
            n,
            crate::rng::derive_seed(key, &[1]),
        )
    }

    /// Random full-support SCM with flat-Dirichlet rows.
    pub fn random(query_card: usize, response_card: usize, n: usize, seed: u64) -> Result<Self> {
        let mut rng = CounterRng::new(seed);
        let query_prior = rng.dirichlet_flat(query_card);
        let response_kernel = (0..query_card)
            .map(|_| rng.dirichlet_flat(response_card))
            .collect();
        let rows = query_card * response_card.pow(n as u32);
        let collider_kernel = (0..rows)
            .map(|_| rng.dirichlet_flat(response_card))
            .collect();
        let scm = FiniteScm {
            query_card,
            response_card,
            n,
            query_prior,
            response_kernel,
            collider_kernel,
        };
        scm.validate()?;
        Ok(scm)
    }
}

fn check_row(name: &str, row: &[f64], card: usize) -> Result<()> {
    if row.len() != card {
        return Err(validation(format!(
            "{name} has {} entries, expected {card}",
            row.len()
        )));
    }
    if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(validation(format!("{name} has entry {bad} outside [0, 1]")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOL {
        return Err(validation(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Dense joint distribution over `(q, y_0, .., y_n)`, row-major with `q`
/// most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub dims: Vec<usize>,
    pub probs: Vec<f64>,
    strides: Vec<usize>,
}

impl JointTable {
    pub fn new(dims: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        let cells: usize = dims.iter().product();
        if cells != probs.len() {
            return Err(validation(format!(
                "table has {} cells, dims imply {cells}",
                probs.len()
            )));
        }
        if dims.len() < 4 {
            return Err(validation(
                "a joint table needs q, at least two responses and y_n",
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(validation("negative or NaN probability"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(validation(format!("joint sums to {s}")));
        }
        let mut strides = vec![1; dims.len()];
        for a in (0..dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Ok(Self {
            dims,
            probs,
            strides,
        })
    }

    /// Number of group responses `n` (the collider is `Response(n)`).
    pub fn n(&self) -> usize {
        self.dims.len() - 2
    }

    pub fn card(&self, var: Var) -> usize {
        self.dims[var.axis()]
    }

    pub fn collider(&self) -> Var {
        Var::Response(self.n())
    }

    pub fn contains(&self, var: Var) -> bool {
        var.axis() < self.dims.len()
    }

    /// All variables in axis order.
    pub fn vars(&self) -> Vec<Var> {
        (0..self.dims.len()).map(Var::from_axis).collect()
    }

    /// Value of `var` in the cell with flat index `cell`.
    #[inline]
    pub fn value(&self, cell: usize, var: Var) -> usize {
        let a = var.axis();
        (cell / self.strides[a]) % self.dims[a]
    }

    /// Iterate over `(cell, probability)` pairs with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
    }
}

/// Enumerate `p(q, y_0..y_n)` under the default cell budget.
pub fn build_joint(scm: &FiniteScm) -> Result<JointTable> {
    build_joint_with_budget(scm, DEFAULT_CELL_BUDGET)
}

pub fn build_joint_with_budget(scm: &FiniteScm, budget: usize) -> Result<JointTable> {
    scm.validate()?;
    let mut dims = vec![scm.query_card];
    dims.extend(std::iter::repeat_n(scm.response_card, scm.n + 1));
    let cells = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c <= budget)
        .ok_or_else(|| Error::Size(format!("joint table over {dims:?} exceeds {budget} cells")))?;

    let rc = scm.response_card;
    let mut probs = vec![0.0; cells];
    let group_cells = rc.pow(scm.n as u32);
    let mut ys = vec![0usize; scm.n];
    for q in 0..scm.query_card {
        let pq = scm.query_prior[q];
        for g in 0..group_cells {
            let mut rest = g;
            for slot in ys.iter_mut().rev() {
                *slot = rest % rc;
                rest /= rc;
            }
            let pg = ys
                .iter()
                .fold(pq, |acc, &y| acc * scm.response_kernel[q][y]);
            let row = &scm.collider_kernel[scm.collider_row(q, &ys)];
            let base = (q * group_cells + g) * rc;
            for (yn, &pc) in row.iter().enumerate() {
                probs[base + yn] = pg * pc;
            }
        }
    }
    JointTable::new(dims, probs)
}
