//! Run the full projection and risk-gap suite over a family of random SCMs.

use gcpo::scm::{build_joint, run_suite, FiniteScm, SuiteOptions};

fn main() -> gcpo::Result<()> {
    let opts = SuiteOptions::default();
    let mut failed = 0;
    for index in 0..10 {
        let table = build_joint(&FiniteScm::sweep_member(7, index)?)?;
        let report = run_suite(&table, &opts)?;
        let worst = report.checks.iter().map(|c| c.value).fold(0.0, f64::max);
        println!(
            "scm {index}: n={} cells={} I(y0;y1|q,y_n)={:.4} worst check {worst:.2e} {}",
            report.n,
            report.cells,
            report.cmi_given_q_yn,
            if report.passed { "ok" } else { "FAILED" }
        );
        failed += usize::from(!report.passed);
    }
    println!("{failed} of 10 failed");
    Ok(())
}
