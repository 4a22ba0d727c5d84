use std::collections::HashMap;

use super::{JointTable, Var};

/// Exact `I(a; b | given)` in bits.
pub fn conditional_mutual_information(table: &JointTable, a: Var, b: Var, given: &[Var]) -> f64 {
    let key = |cell: usize, vars: &[Var]| -> Vec<usize> {
        vars.iter().map(|&v| table.value(cell, v)).collect()
    };
    let mut p_abc: HashMap<(usize, usize, Vec<usize>), f64> = HashMap::new();
    let mut p_ac: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut p_bc: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut p_c: HashMap<Vec<usize>, f64> = HashMap::new();
    for (cell, p) in table.support() {
        let c = key(cell, given);
        let va = table.value(cell, a);
        let vb = table.value(cell, b);
        *p_abc.entry((va, vb, c.clone())).or_default() += p;
        *p_ac.entry((va, c.clone())).or_default() += p;
        *p_bc.entry((vb, c.clone())).or_default() += p;
        *p_c.entry(c).or_default() += p;
    }
    let mut terms: Vec<_> = p_abc.into_iter().collect();
    // fixed summation order
    terms.sort_by(|x, y| x.0.cmp(&y.0));
    terms
        .into_iter()
        .map(|((va, vb, c), pabc)| {
            let num = pabc * p_c[&c];
            let den = p_ac[&(va, c.clone())] * p_bc[&(vb, c)];
            pabc * (num / den).log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// `(I(y_0; y_1 | q), I(y_0; y_1 | q, y_n))` in bits.
pub fn verify_collider_dependence(table: &JointTable) -> (f64, f64) {
    let y0 = Var::Response(0);
    let y1 = Var::Response(1);
    let given_q = conditional_mutual_information(table, y0, y1, &[Var::Query]);
    let given_q_yn = conditional_mutual_information(table, y0, y1, &[Var::Query, table.collider()]);
    (given_q, given_q_yn)
}
