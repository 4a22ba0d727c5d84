//! Compare the analytic gradient of the causal surrogate with central
//! differences on a handful of coordinates.

use gcpo::objective::{compute_causal, gcpo_objective, group_advantage, GroupBatch};
use gcpo::policy::{ModelShape, PolicyParams, PolicySnapshot, Vocab};
use gcpo::rng::CounterRng;
use gcpo::rollout::sample_group;
use gcpo::task::{gen_query, reward};
use gcpo::trainer::TrainConfig;

fn main() -> gcpo::Result<()> {
    let cfg = TrainConfig::default();
    let vocab = Vocab::arithmetic();
    let shape = ModelShape {
        d: 16,
        layers: 1,
        vocab_size: vocab.len(),
        max_context: 64,
    };
    // The output layer starts at zero; randomise it so every layer gets gradient.
    let mut params = PolicyParams::init(shape, &vocab, 4)?;
    let mut rng = CounterRng::new(4);
    for i in params.output_projection_range() {
        params.values[i] = 0.5 * rng.normal();
    }
    let snapshot = PolicySnapshot::new(&params, 0);
    let query = gen_query(&cfg.task, &vocab, 5)?;
    let group = sample_group(&snapshot, &query.q, 4, 4, cfg.sampling(), 6)?;
    let rewards: Vec<f64> = group
        .responses
        .iter()
        .map(|y| reward(&cfg.task, &vocab, &query, y).total)
        .collect();
    let adv = group_advantage(&rewards)?;
    let causal_cfg = cfg.causal();
    let causal = compute_causal(&snapshot, &group, &adv.advantages, &causal_cfg, 8)?;
    let mut batch =
        GroupBatch::from_group(&group, group.old_logps.clone(), causal.weights.b.clone());
    batch.causal = Some(causal.kl_inputs());
    let batch = [batch];

    let objective =
        |p: &PolicyParams| gcpo_objective(&batch, p, &cfg.surrogate(), causal_cfg.kappa);
    let analytic = objective(&params)?.grad;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in (0..params.len()).step_by(params.len() / 12) {
        let mut plus = params.clone();
        plus.values[i] += h;
        let mut minus = params.clone();
        minus.values[i] -= h;
        let fd = (objective(&plus)?.value - objective(&minus)?.value) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
        println!(
            "param {i:>6}: analytic {:+.6e} numeric {fd:+.6e}",
            analytic[i]
        );
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
