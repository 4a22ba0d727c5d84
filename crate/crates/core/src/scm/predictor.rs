use super::{JointTable, Var};
use crate::error::{validation, Result};

/// A real-valued function of a subset of the SCM variables, stored as a
/// dense table over that subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    conditioning: Vec<Var>,
    cards: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<f64>,
}

impl Predictor {
    /// Tabulate `f` over every assignment of `conditioning`. The closure
    /// receives values in the (sorted) order of the conditioning set.
    pub fn from_fn(
        table: &JointTable,
        conditioning: &[Var],
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self> {
        let mut vars = conditioning.to_vec();
        vars.sort();
        vars.dedup();
        if let Some(v) = vars.iter().find(|v| !table.contains(**v)) {
            return Err(validation(format!("variable {v} is not in the SCM")));
        }
        let cards: Vec<usize> = vars.iter().map(|&v| table.card(v)).collect();
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0usize; vars.len()];
        for idx in 0..size {
            let mut rest = idx;
            for (slot, &c) in assign.iter_mut().zip(&cards).rev() {
                *slot = rest % c;
                rest /= c;
            }
            values.push(f(&assign));
        }
        Self::from_values(vars, cards, values)
    }

    /// Construct directly from a value table laid out row-major over the
    /// sorted conditioning set.
    pub fn from_values(
        conditioning: Vec<Var>,
        cards: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if conditioning.windows(2).any(|w| w[0] >= w[1]) {
            return Err(validation("conditioning set must be sorted and distinct"));
        }
        if conditioning.len() != cards.len() {
            return Err(validation(
                "conditioning set and cardinalities differ in length",
            ));
        }
        if values.len() != cards.iter().product::<usize>() {
            return Err(validation("value table size does not match cardinalities"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(validation("predictor values must be finite"));
        }
        let mut strides = vec![1; cards.len()];
        for a in (0..cards.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * cards[a + 1];
        }
        Ok(Self {
            conditioning,
            cards,
            strides,
            values,
        })
    }

    pub fn constant(table: &JointTable, c: f64) -> Result<Self> {
        Self::from_fn(table, &[], |_| c)
    }

    /// `f(cell) = code of var`.
    pub fn indicator_of(table: &JointTable, var: Var) -> Result<Self> {
        Self::from_fn(table, &[var], |a| a[0] as f64)
    }

    pub fn conditioning(&self) -> &[Var] {
        &self.conditioning
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    /// Evaluate on a joint-table cell.
    #[inline]
    pub fn at_cell(&self, table: &JointTable, cell: usize) -> f64 {
        let idx = self
            .conditioning
            .iter()
            .zip(&self.strides)
            .map(|(&v, &s)| table.value(cell, v) * s)
            .sum::<usize>();
        self.values[idx]
    }

    /// Evaluate on an assignment listed in conditioning order.
    pub fn at(&self, assignment: &[usize]) -> f64 {
        let idx: usize = assignment
            .iter()
            .zip(&self.strides)
            .map(|(a, s)| a * s)
            .sum();
        self.values[idx]
    }

    /// Pointwise combination on the union of both conditioning sets.
    pub fn zip_with(
        &self,
        other: &Predictor,
        table: &JointTable,
        op: impl Fn(f64, f64) -> f64,
    ) -> Result<Predictor> {
        let mut vars = self.conditioning.clone();
        vars.extend_from_slice(&other.conditioning);
        vars.sort();
        vars.dedup();
        let pick = |p: &Predictor, assign: &[usize]| {
            let sub: Vec<usize> = p
                .conditioning
                .iter()
                .map(|v| assign[vars.binary_search(v).expect("union contains v")])
                .collect();
            p.at(&sub)
        };
        Predictor::from_fn(table, &vars, |a| op(pick(self, a), pick(other, a)))
    }

    pub fn add(&self, other: &Predictor, table: &JointTable) -> Result<Predictor> {
        self.zip_with(other, table, |a, b| a + b)
    }

    pub fn sub(&self, other: &Predictor, table: &JointTable) -> Result<Predictor> {
        self.zip_with(other, table, |a, b| a - b)
    }

    /// Re-express on a larger conditioning set (values broadcast).
    pub fn extend_to(&self, table: &JointTable, vars: &[Var]) -> Result<Predictor> {
        let zero = Predictor::from_fn(table, vars, |_| 0.0)?;
        self.zip_with(&zero, table, |a, _| a)
    }

    /// Whether the predictor only depends on variables in `vars`.
    pub fn is_measurable_in(&self, vars: &[Var]) -> bool {
        self.conditioning.iter().all(|v| vars.contains(v))
    }
}
