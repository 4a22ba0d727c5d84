//! Train on single-digit modular addition and report the learning curve.
//! Pass `grpo` or `gcpo` and an optional step count.

use gcpo::trainer::{train, Algorithm, TrainConfig};

fn main() -> gcpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let algorithm: Algorithm = args
        .next()
        .as_deref()
        .unwrap_or("grpo")
        .parse()
        .map_err(gcpo::Error::Validation)?;
    let steps = match args.next() {
        Some(s) => s.parse().map_err(|_| {
            gcpo::Error::Validation(format!("step count must be an integer, got {s}"))
        })?,
        None => 60,
    };
    let cfg = TrainConfig {
        algorithm,
        steps,
        ..TrainConfig::default()
    };
    let outcome = train(&cfg)?;
    for chunk in outcome.records.chunks(10) {
        let mean = chunk.iter().map(|r| r.mean_reward).sum::<f64>() / chunk.len() as f64;
        println!(
            "steps {:>4}..{:<4} mean reward {mean:.4}",
            chunk[0].step,
            chunk[chunk.len() - 1].step
        );
    }
    println!(
        "held-out pass@1 {:.3}, mean reward {:.3}",
        outcome.final_eval.pass_at_1, outcome.final_eval.mean_reward
    );
    Ok(())
}
