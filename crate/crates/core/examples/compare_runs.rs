//! Train both algorithms over a few seeds and print the comparison table.

use gcpo::cli::{compare, compare_table};
use gcpo::trainer::{Algorithm, TrainConfig};

fn main() -> gcpo::Result<()> {
    let arm = |algorithm| TrainConfig {
        algorithm,
        steps: 15,
        ..TrainConfig::default()
    };
    let arms = vec![
        ("grpo".to_string(), arm(Algorithm::Grpo)),
        ("gcpo".to_string(), arm(Algorithm::Gcpo)),
    ];
    let out = std::env::temp_dir().join("gcpo_compare_example");
    let report = compare(&arms, &[0, 1], &out)?;
    print!("{}", compare_table(&report));
    println!("runs written under {}", out.display());
    Ok(())
}
