//! One group through the clipped surrogate: sample, score, standardise
//! rewards and evaluate the objective and its gradient.

use gcpo::objective::{group_advantage, grpo_objective, GroupBatch};
use gcpo::policy::{Decoding, PolicyParams, PolicySnapshot, Vocab};
use gcpo::rollout::sample_group;
use gcpo::task::{gen_query, reward};
use gcpo::trainer::TrainConfig;

fn main() -> gcpo::Result<()> {
    let cfg = TrainConfig::default();
    let vocab = Vocab::arithmetic();
    let params = PolicyParams::init(cfg.model_shape(&vocab), &vocab, 1)?;
    let snapshot = PolicySnapshot::new(&params, 0);
    let query = gen_query(&cfg.task, &vocab, 3)?;

    let group = sample_group(
        &snapshot,
        &query.q,
        8,
        cfg.max_len,
        Decoding::Temperature(1.0),
        42,
    )?;
    let rewards: Vec<f64> = group
        .responses
        .iter()
        .map(|y| reward(&cfg.task, &vocab, &query, y).total)
        .collect();
    let adv = group_advantage(&rewards)?;
    for (y, (r, a)) in group
        .responses
        .iter()
        .zip(rewards.iter().zip(&adv.advantages))
    {
        println!(
            "{:<8} reward {r:.1} advantage {a:+.3}",
            vocab.render(&y.ids)
        );
    }

    let batch = GroupBatch::from_group(&group, group.old_logps.clone(), adv.advantages.clone());
    let out = grpo_objective(&[batch], &params, &cfg.surrogate())?;
    let norm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!(
        "objective {:.6}, gradient norm {norm:.4}, clip fraction {:.3}",
        out.value, out.stats.clip_fraction
    );
    Ok(())
}
