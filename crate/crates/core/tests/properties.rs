mod common;

use gcpo::objective::{
    causal_ref_prob, clipped_term, group_advantage, kl_token, similarity, upsilon, Metric,
    PROB_FLOOR, STD_FLOOR,
};
use gcpo::policy::{read_checkpoint, write_checkpoint, PolicyParams, Vocab};
use gcpo::rng::{derive_seed, CounterRng};
use gcpo::scm::{build_joint, context_vars, project_phi, FiniteScm, Predictor, Var};
use gcpo::trainer::{lr_at, optimizer_step, AdamState, Algorithm, Schedule, TrainConfig};
use proptest::prelude::*;

fn metric() -> impl Strategy<Value = Metric> {
    prop_oneof![
        Just(Metric::Cosine),
        Just(Metric::Euclidean),
        Just(Metric::Gaussian)
    ]
}

proptest! {
    #[test]
    fn advantages_are_standardised(rewards in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        let rec = group_advantage(&rewards).unwrap();
        let n = rewards.len() as f64;
        if rec.group_std > STD_FLOOR {
            let mean = rec.advantages.iter().sum::<f64>() / n;
            let var = rec.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
        } else {
            prop_assert!(rec.advantages.iter().all(|a| *a == 0.0));
        }
    }

    #[test]
    fn constant_groups_have_zero_advantage(r in -3.0f64..3.0, n in 2usize..10) {
        prop_assert!(group_advantage(&vec![r; n]).unwrap().advantages.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn kl_token_is_non_negative(a in -30.0f64..0.0, b in -30.0f64..0.0) {
        prop_assert!(kl_token(a, b) >= 0.0);
        prop_assert_eq!(kl_token(a, a), 0.0);
    }

    #[test]
    fn clipped_term_is_pessimistic(r in 0.0f64..5.0, a in -3.0f64..3.0, eps in 0.01f64..0.99) {
        let v = clipped_term(r, a, eps);
        prop_assert!(v <= r * a + 1e-15);
        prop_assert!(v <= r.clamp(1.0 - eps, 1.0 + eps) * a + 1e-15);
    }

    #[test]
    fn causal_reference_is_a_probability(p in 0.0f64..1.0, phi in 0.0f64..3.0, q in 0.0f64..1.0) {
        let (clamped, raw) = causal_ref_prob(p, phi, q);
        prop_assert!((PROB_FLOOR..=1.0).contains(&clamped));
        prop_assert!((raw - (p - phi + q)).abs() < 1e-15);
    }

    #[test]
    fn upsilon_is_bounded(
        z in prop::collection::vec(-10.0f64..10.0, 4),
        t in prop::collection::vec(-10.0f64..10.0, 4),
        alpha in 0.0f64..5.0,
        m in metric(),
    ) {
        if let Some(s) = similarity(m, &z, &t) {
            prop_assert!((-1.0..=1.0).contains(&s));
        }
        if let Some(u) = upsilon(&z, &t, alpha, m) {
            prop_assert!(u.abs() <= alpha + 1e-12);
        }
    }

    #[test]
    fn rng_is_a_pure_function(key in any::<u64>(), skip in 0u64..64) {
        let mut a = CounterRng::new(key);
        for _ in 0..skip {
            a.next_u64();
        }
        prop_assert_eq!(a.next_u64(), CounterRng::draw(key, skip));
        prop_assert_eq!(derive_seed(key, &[1, 2]), derive_seed(key, &[1, 2]));
        prop_assert_ne!(derive_seed(key, &[1, 2]), derive_seed(key, &[2, 1]));
    }

    #[test]
    fn optimizer_is_deterministic(g in prop::collection::vec(-2.0f64..2.0, 5), lr in 0.0f64..0.1) {
        let mut p1 = vec![0.3, -0.2, 1.0, 0.0, 2.5];
        let mut p2 = p1.clone();
        let (mut s1, mut s2) = (AdamState::new(5), AdamState::new(5));
        for _ in 0..3 {
            optimizer_step(&mut p1, &g, &mut s1, lr, 0.01).unwrap();
            optimizer_step(&mut p2, &g, &mut s2, lr, 0.01).unwrap();
        }
        prop_assert_eq!(p1, p2);
    }

    #[test]
    fn cosine_schedule_stays_in_range(step in 0usize..100, warm in 0.0f64..0.5) {
        let lr = lr_at(Schedule::Cosine, 0.01, step, 100, warm);
        prop_assert!((0.0..=0.01 + 1e-15).contains(&lr));
    }

    #[test]
    fn config_text_round_trips(
        steps in 1usize..1000,
        n in 2usize..9,
        lr in 1e-7f64..1.0,
        kappa in 0.0f64..1.0,
        seed in any::<u64>(),
        grpo in any::<bool>(),
    ) {
        let cfg = TrainConfig {
            steps,
            n,
            lr,
            kappa,
            seed,
            algorithm: if grpo { Algorithm::Grpo } else { Algorithm::Gcpo },
            ..TrainConfig::default()
        };
        prop_assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>()) {
        let mut p: PolicyParams = common::random_policy(seed);
        p.round_to_f32();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice(), &Vocab::arithmetic()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), index in 0u64..4) {
        let scm = FiniteScm::sweep_member(seed, index).unwrap();
        let table = build_joint(&scm).unwrap();
        let mut rng = CounterRng::new(seed);
        let f = Predictor::from_fn(&table, &context_vars(&table), |_| rng.normal()).unwrap();
        let phi = project_phi(&f, &table).unwrap();
        let twice = project_phi(&phi, &table).unwrap();
        for (c, _) in table.support() {
            prop_assert!((phi.at_cell(&table, c) - twice.at_cell(&table, c)).abs() < 1e-10);
        }
        prop_assert!(table.contains(Var::Query));
    }
}
