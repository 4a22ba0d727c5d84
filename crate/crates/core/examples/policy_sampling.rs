//! Sample and greedily decode from a freshly initialised policy, and check
//! that the reported log-probs match a full forward pass.

use gcpo::policy::{sample, Decoding, ModelShape, PolicyParams, PolicySnapshot, Vocab};
use gcpo::task::{gen_query, TaskSpec};

fn main() -> gcpo::Result<()> {
    let vocab = Vocab::arithmetic();
    let shape = ModelShape {
        d: 32,
        layers: 2,
        vocab_size: vocab.len(),
        max_context: 64,
    };
    let params = PolicyParams::init(shape, &vocab, 5)?;
    let snapshot = PolicySnapshot::new(&params, 0);
    let query = gen_query(&TaskSpec::modadd(1), &vocab, 11)?;
    println!("query {}", vocab.render(&query.q.ids));

    for seed in 0..3 {
        let s = sample(&snapshot, &query.q.ids, 6, Decoding::Temperature(1.0), seed)?;
        let rescored = params.log_prob(&query.q.ids, &s.tokens.ids)?;
        let drift = s
            .logps
            .iter()
            .zip(&rescored)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "sample {seed}: {:<10} rescoring drift {drift:.1e}",
            vocab.render(&s.tokens.ids)
        );
    }
    let g = sample(&snapshot, &query.q.ids, 6, Decoding::Greedy, 0)?;
    println!("greedy: {}", vocab.render(&g.tokens.ids));
    Ok(())
}
