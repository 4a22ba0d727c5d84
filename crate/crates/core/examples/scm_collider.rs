//! Exact conditional mutual information on the XOR collider: responses are
//! independent given the query, and fully dependent once the collider is
//! observed.

use gcpo::scm::{
    bayes_predictor, build_joint, context_vars, verify_baseline_gap, verify_collider_dependence,
    FiniteScm, Var,
};

fn main() -> gcpo::Result<()> {
    let table = build_joint(&FiniteScm::xor(2)?)?;
    let (given_q, given_q_yn) = verify_collider_dependence(&table);
    println!("I(y0; y1 | q)      = {given_q:.6} bits");
    println!("I(y0; y1 | q, y_n) = {given_q_yn:.6} bits");

    let fstar = bayes_predictor(&table, Var::Response(0), &context_vars(&table))?;
    let gap = verify_baseline_gap(&fstar, &table)?;
    println!(
        "Bayes predictor: risk gap over the query baseline {:.6}, ||psi f||^2 {:.6}",
        gap.delta, gap.psi_norm_sq
    );
    Ok(())
}
