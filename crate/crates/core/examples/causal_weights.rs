//! Causal weights for one sampled group: representation targets, the
//! bounded per-response weights and the causal reference probabilities.

use gcpo::objective::{compute_causal, group_advantage};
use gcpo::policy::{PolicyParams, PolicySnapshot, Vocab};
use gcpo::rollout::sample_group;
use gcpo::task::{gen_query, reward};
use gcpo::trainer::TrainConfig;

fn main() -> gcpo::Result<()> {
    let cfg = TrainConfig::default();
    let vocab = Vocab::arithmetic();
    let params = PolicyParams::init(cfg.model_shape(&vocab), &vocab, 2)?;
    let snapshot = PolicySnapshot::new(&params, 0);

    // Take the first query whose group has rewards that differ.
    let (group, adv) = (0..)
        .find_map(|seed| {
            let query = gen_query(&cfg.task, &vocab, seed).ok()?;
            let group = sample_group(
                &snapshot,
                &query.q,
                cfg.n,
                cfg.max_len,
                cfg.sampling(),
                seed,
            )
            .ok()?;
            let rewards: Vec<f64> = group
                .responses
                .iter()
                .map(|y| reward(&cfg.task, &vocab, &query, y).total)
                .collect();
            let adv = group_advantage(&rewards).ok()?;
            (adv.group_std > 0.0).then_some((group, adv))
        })
        .expect("some group has varied rewards");
    println!("query {}", vocab.render(&group.q.ids));
    let causal = compute_causal(&snapshot, &group, &adv.advantages, &cfg.causal(), 77)?;

    println!(
        "collider output: {}",
        vocab.render(&causal.collider.y_n.ids)
    );
    for (i, y) in group.responses.iter().enumerate() {
        println!(
            "{:<8} A {:+.3} upsilon {:+.4} weight {:+.4}",
            vocab.render(&y.ids),
            adv.advantages[i],
            causal.weights.upsilon[i],
            causal.weights.b[i]
        );
    }
    let (lo, hi) = causal.ref_tokens.raw_range();
    println!(
        "reference probabilities before clamping in [{lo:.4}, {hi:.4}], {} clamped, {} auxiliary generations",
        causal.ref_tokens.clamp_count, causal.aux_generations
    );
    Ok(())
}
