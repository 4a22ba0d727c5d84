//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Every expected value is computed here, apart
//! from the library under test.

mod common;

use std::collections::HashMap;
use std::fs;
use std::time::Instant;

use gcpo::cli::compare;
use gcpo::objective::{
    gcpo_objective, group_advantage, grpo_objective, kl_token, SurrogateConfig, STD_FLOOR,
};
use gcpo::policy::{sample, PolicyParams, PolicySnapshot, Vocab};
use gcpo::rng::{derive_seed, CounterRng};
use gcpo::scm::{
    bayes_predictor, build_joint, context_vars, phi_vars, project_phi, project_psi,
    verify_collider_dependence, verify_projection_gap, FiniteScm, JointTable, Predictor, Var,
};
use gcpo::task::{gen_query, reward, EVAL_SEED_START};
use gcpo::trainer::{
    train, train_to_dir, Algorithm, MetricsRecord, TrainConfig, TrainOutcome, Trainer, METRICS_FILE,
};

const SWEEP_SEED: u64 = 2024;
const SWEEP_SIZE: u64 = 50;

/// Minimum gain of late training reward over the untrained policy's
/// expected reward, pinned from pilot runs of the standard fixture.
const TRAINING_MARGIN: f64 = 0.03;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Exact-enumeration oracles over the joint table's support.

struct Support {
    cells: Vec<usize>,
    probs: Vec<f64>,
}

impl Support {
    fn of(table: &JointTable) -> Self {
        let (cells, probs) = table.support().unzip();
        Support { cells, probs }
    }

    fn key(&self, table: &JointTable, k: usize, vars: &[Var]) -> Vec<usize> {
        vars.iter()
            .map(|&v| table.value(self.cells[k], v))
            .collect()
    }

    /// Conditional expectation of `values` given `vars`, by grouping cells.
    fn cond_mean(&self, table: &JointTable, values: &[f64], vars: &[Var]) -> Vec<f64> {
        let mut num: HashMap<Vec<usize>, f64> = HashMap::new();
        let mut den: HashMap<Vec<usize>, f64> = HashMap::new();
        for k in 0..self.cells.len() {
            let key = self.key(table, k, vars);
            *num.entry(key.clone()).or_default() += self.probs[k] * values[k];
            *den.entry(key).or_default() += self.probs[k];
        }
        (0..self.cells.len())
            .map(|k| {
                let key = self.key(table, k, vars);
                num[&key] / den[&key]
            })
            .collect()
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..self.cells.len())
            .map(|k| self.probs[k] * a[k] * b[k])
            .sum()
    }

    fn target(&self, table: &JointTable) -> Vec<f64> {
        (0..self.cells.len())
            .map(|k| table.value(self.cells[k], Var::Response(0)) as f64)
            .collect()
    }

    fn risk_gap(&self, y: &[f64], f1: &[f64], f2: &[f64]) -> f64 {
        (0..self.cells.len())
            .map(|k| self.probs[k] * ((y[k] - f1[k]).powi(2) - (y[k] - f2[k]).powi(2)))
            .sum()
    }

    fn eval(&self, table: &JointTable, f: &Predictor) -> Vec<f64> {
        self.cells.iter().map(|&c| f.at_cell(table, c)).collect()
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// A random function of `vars`, as a predictor and as per-cell values.
fn random_function(
    table: &JointTable,
    s: &Support,
    vars: &[Var],
    rng: &mut CounterRng,
    scale: f64,
) -> (Predictor, Vec<f64>) {
    let mut by_key: HashMap<Vec<usize>, f64> = HashMap::new();
    let f = Predictor::from_fn(table, vars, |a| {
        let v = scale * rng.normal();
        by_key.insert(a.to_vec(), v);
        v
    })
    .unwrap();
    let mut sorted = vars.to_vec();
    sorted.sort();
    let values = (0..s.cells.len())
        .map(|k| by_key[&s.key(table, k, &sorted)])
        .collect();
    (f, values)
}

fn sweep() -> Vec<JointTable> {
    (0..SWEEP_SIZE)
        .map(|i| build_joint(&FiniteScm::sweep_member(SWEEP_SEED, i).unwrap()).unwrap())
        .collect()
}

fn criterion_projection_algebra() -> Outcome {
    let mut rng = CounterRng::new(1);
    let (mut idem, mut psi_phi, mut orth, mut pyth, mut vs_oracle) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut shapes = (usize::MAX, 0, usize::MAX, 0);
    for table in sweep() {
        shapes.0 = shapes.0.min(table.n());
        shapes.1 = shapes.1.max(table.n());
        let max_card = table.dims.iter().copied().max().unwrap();
        shapes.2 = shapes.2.min(max_card);
        shapes.3 = shapes.3.max(max_card);
        let s = Support::of(&table);
        let pv = phi_vars(&table);
        for _ in 0..4 {
            let (f, fv) = random_function(&table, &s, &table.vars(), &mut rng, 1.0);
            let (g, gv) = random_function(&table, &s, &table.vars(), &mut rng, 1.0);
            let phi_f = project_phi(&f, &table).unwrap();
            let phi_f_v = s.eval(&table, &phi_f);
            let oracle = s.cond_mean(&table, &fv, &pv);
            vs_oracle = vs_oracle.max(max_abs(&sub(&phi_f_v, &oracle)));
            let phi_phi = s.eval(&table, &project_phi(&phi_f, &table).unwrap());
            idem = idem.max(max_abs(&sub(&phi_phi, &phi_f_v)));
            psi_phi = psi_phi.max(max_abs(
                &s.eval(&table, &project_psi(&phi_f, &table).unwrap()),
            ));
            let psi_g = s.eval(&table, &project_psi(&g, &table).unwrap());
            orth = orth.max(s.dot(&phi_f_v, &psi_g).abs());
            let oracle_psi_g = sub(&gv, &s.cond_mean(&table, &gv, &pv));
            vs_oracle = vs_oracle.max(max_abs(&sub(&psi_g, &oracle_psi_g)));
            let psi_f = s.eval(&table, &project_psi(&f, &table).unwrap());
            pyth = pyth
                .max((s.dot(&fv, &fv) - s.dot(&phi_f_v, &phi_f_v) - s.dot(&psi_f, &psi_f)).abs());
        }
    }
    let worst = idem.max(psi_phi).max(orth).max(pyth).max(vs_oracle);
    outcome(
        worst <= 1e-10,
        format!(
            "{SWEEP_SIZE} SCMs (n {}..{}, max card {}..{}): idempotence {idem:.1e}, psi(phi) {psi_phi:.1e}, \
             orthogonality {orth:.1e}, pythagoras {pyth:.1e}, vs oracle {vs_oracle:.1e} (tol 1e-10)",
            shapes.0, shapes.1, shapes.2, shapes.3
        ),
    )
}

fn criterion_risk_gaps() -> Outcome {
    let mut rng = CounterRng::new(2);
    let (mut min_delta, mut t1_gap, mut c2_gap, mut lib_gap, mut general_gap) =
        (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for table in sweep() {
        let s = Support::of(&table);
        let y = s.target(&table);
        let x = context_vars(&table);
        let pv = phi_vars(&table);
        let fstar = s.cond_mean(&table, &y, &x);
        let b = s.cond_mean(&table, &y, &[Var::Query]);
        let psi = |v: &[f64]| sub(v, &s.cond_mean(&table, v, &pv));
        let psi_star = psi(&fstar);
        let fstar_pred = bayes_predictor(&table, Var::Response(0), &x).unwrap();
        for _ in 0..100 {
            // Projection gap: arbitrary perturbation of the Bayes predictor.
            let (e, ev) = random_function(&table, &s, &x, &mut rng, 0.3);
            let fv = add(&fstar, &ev);
            let phi_f = s.cond_mean(&table, &fv, &pv);
            let projected = add(&sub(&fv, &phi_f), &b);
            let delta = s.risk_gap(&y, &fv, &projected);
            let resid = sub(&phi_f, &b);
            min_delta = min_delta.min(delta);
            t1_gap = t1_gap.max((delta - s.dot(&resid, &resid)).abs());
            let lib = verify_projection_gap(&fstar_pred.add(&e, &table).unwrap(), &table).unwrap();
            lib_gap = lib_gap.max((lib.delta - delta).abs());
            // General form of the baseline gap.
            let base_gap = s.risk_gap(&y, &b, &projected);
            let psi_e = psi(&ev);
            general_gap = general_gap
                .max((base_gap - (s.dot(&psi_star, &psi_star) - s.dot(&psi_e, &psi_e))).abs());

            // Baseline gap: perturbations measurable in (q, y_1..y_{n-1}) keep Ψf = Ψf*.
            let (_, cv) = random_function(&table, &s, &pv, &mut rng, 0.3);
            let fv = add(&fstar, &cv);
            let psi_f = psi(&fv);
            let projected = add(&psi_f, &b);
            let c_delta = s.risk_gap(&y, &b, &projected);
            c2_gap = c2_gap.max((c_delta - s.dot(&psi_f, &psi_f)).abs());
        }
    }
    let passed = min_delta >= -1e-10
        && t1_gap <= 1e-8
        && c2_gap <= 1e-8
        && lib_gap <= 1e-10
        && general_gap <= 1e-8;
    outcome(
        passed,
        format!(
            "min gap {min_delta:.3e} (>= -1e-10), projection identity {t1_gap:.1e}, baseline identity {c2_gap:.1e} \
             (tol 1e-8), library vs oracle {lib_gap:.1e}, general baseline form {general_gap:.1e}"
        ),
    )
}

/// `I(a; b | c)` in bits from an explicit list of `(assignment, p)`.
fn cmi_oracle(joint: &[(Vec<usize>, f64)], a: usize, b: usize, given: &[usize]) -> f64 {
    let mut pabc: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut pac: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut pbc: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut pc: HashMap<Vec<usize>, f64> = HashMap::new();
    for (x, p) in joint {
        let c: Vec<usize> = given.iter().map(|&i| x[i]).collect();
        let with = |v: usize| {
            let mut k = vec![v];
            k.extend(&c);
            k
        };
        *pabc
            .entry([vec![x[a], x[b]], c.clone()].concat())
            .or_default() += p;
        *pac.entry(with(x[a])).or_default() += p;
        *pbc.entry(with(x[b])).or_default() += p;
        *pc.entry(c).or_default() += p;
    }
    pabc.iter()
        .map(|(k, p)| {
            let c = k[2..].to_vec();
            let num = p * pc[&c];
            let den = pac[&[vec![k[0]], c.clone()].concat()] * pbc[&[vec![k[1]], c].concat()];
            p * (num / den).log2()
        })
        .sum()
}

fn criterion_collider_signature() -> Outcome {
    let mut joint = Vec::new();
    for q in 0..2 {
        for y0 in 0..2 {
            for y1 in 0..2 {
                joint.push((vec![q, y0, y1, y0 ^ y1], 0.125));
            }
        }
    }
    let oracle_fork = cmi_oracle(&joint, 1, 2, &[0]);
    let oracle_collider = cmi_oracle(&joint, 1, 2, &[0, 3]);
    let table = build_joint(&FiniteScm::xor(2).unwrap()).unwrap();
    let mut table_matches = true;
    for (cell, p) in table.support() {
        let x: Vec<usize> = table.vars().iter().map(|&v| table.value(cell, v)).collect();
        table_matches &= joint.iter().any(|(j, q)| *j == x && (q - p).abs() < 1e-15);
    }
    table_matches &= table.support().count() == joint.len();
    let (fork, collider) = verify_collider_dependence(&table);
    let passed = fork <= 1e-10
        && (collider - 1.0).abs() <= 1e-9
        && (fork - oracle_fork).abs() <= 1e-12
        && (collider - oracle_collider).abs() <= 1e-12
        && table_matches;
    outcome(
        passed,
        format!(
            "XOR: I(y0;y1|q) = {fork:.3e} bits, I(y0;y1|q,y_n) = {collider:.12} bits \
             (oracle {oracle_fork:.3e}, {oracle_collider:.12}), joint matches oracle: {table_matches}"
        ),
    )
}

fn surrogate() -> SurrogateConfig {
    SurrogateConfig {
        eps: common::EPS,
        beta: common::BETA,
    }
}

fn criterion_objective_oracles() -> Outcome {
    let g = common::grpo_fixture();
    let go = grpo_objective(std::slice::from_ref(&g.batch), &g.params, &surrogate()).unwrap();
    let c = common::gcpo_fixture();
    let co = gcpo_objective(
        std::slice::from_ref(&c.batch),
        &c.params,
        &surrogate(),
        c.kappa,
    )
    .unwrap();
    let grad_gap = |o: &[f64], f: &common::OracleFixture| {
        common::bias_range(&f.params)
            .enumerate()
            .map(|(k, i)| (o[i] - f.bias_grad[k]).abs())
            .fold(0.0, f64::max)
    };
    let gv = (go.value - g.value).abs();
    let cv = (co.value - c.value).abs();
    let gg = grad_gap(&go.grad, &g);
    let cg = grad_gap(&co.grad, &c);
    outcome(
        gv.max(cv).max(gg).max(cg) <= 1e-10,
        format!(
            "3x2 clipped surrogate {:.12} vs oracle {:.12} (|d| {gv:.1e}, bias grad {gg:.1e}); \
             2x2 causal surrogate {:.12} vs oracle {:.12} (|d| {cv:.1e}, bias grad {cg:.1e})",
            go.value, g.value, co.value, c.value
        ),
    )
}

fn standard(algorithm: Algorithm, steps: usize) -> TrainConfig {
    TrainConfig {
        algorithm,
        steps,
        ..TrainConfig::default()
    }
}

fn criterion_reduction_law() -> Outcome {
    let grpo = train(&standard(Algorithm::Grpo, 20)).unwrap();
    let gcpo = train(&TrainConfig {
        kappa: 0.0,
        force_upsilon: Some(1.0),
        ..standard(Algorithm::Gcpo, 20)
    })
    .unwrap();
    let same = grpo.records.len() == 20
        && gcpo.records.len() == 20
        && grpo
            .records
            .iter()
            .zip(&gcpo.records)
            .all(|(a, b)| a.objective.to_bits() == b.objective.to_bits());
    let params_same = grpo.params.values == gcpo.params.values;
    outcome(
        same && params_same,
        format!(
            "20 steps: objectives bit-identical {same}, final parameters identical {params_same}"
        ),
    )
}

fn criterion_gradients() -> Outcome {
    let mut worst = [0.0f64; 2];
    let mut checked = 0;
    for (slot, causal) in [false, true].into_iter().enumerate() {
        let (params, batch) = common::fd_fixture(21 + slot as u64, causal);
        let value = |p: &PolicyParams| {
            if causal {
                gcpo_objective(&batch, p, &surrogate(), common::KAPPA).unwrap()
            } else {
                grpo_objective(&batch, p, &surrogate()).unwrap()
            }
        };
        let analytic = value(&params).grad;
        let mut rng = CounterRng::new(99 + slot as u64);
        for _ in 0..64 {
            let i = rng.below(params.len() as u64) as usize;
            let fd = common::central_difference(&params, i, 1e-5, |p| value(p).value);
            worst[slot] = worst[slot].max(common::relative_error(analytic[i], fd, 1e-6));
            checked += 1;
        }
    }
    outcome(
        worst[0] <= 1e-4 && worst[1] <= 1e-4,
        format!(
            "{checked} coordinates: max relative error clipped {:.2e}, causal {:.2e} (tol 1e-4)",
            worst[0], worst[1]
        ),
    )
}

fn criterion_kl_positivity(gcpo_records: &[MetricsRecord]) -> Outcome {
    let mut rng = CounterRng::new(7);
    let mut min_token = f64::INFINITY;
    for _ in 0..100_000 {
        let a = -30.0 * rng.next_f64();
        let b = -30.0 * rng.next_f64();
        min_token = min_token.min(kl_token(a, b));
    }
    let min_causal = gcpo_records
        .iter()
        .map(|r| r.min_kl_causal.unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    let every = gcpo_records
        .iter()
        .all(|r| r.min_kl_causal.is_some_and(|k| k >= 0.0));
    outcome(
        min_token >= 0.0 && every,
        format!(
            "1e5 token pairs: min {min_token:.3e}; causal KL over {} training steps: min {min_causal:.3e}",
            gcpo_records.len()
        ),
    )
}

fn criterion_advantages() -> Outcome {
    let mut rng = CounterRng::new(8);
    let (mut mean_err, mut std_err) = (0.0f64, 0.0f64);
    let (mut flat, mut flat_ok) = (0, true);
    for k in 0..10_000 {
        let n = 2 + rng.below(15) as usize;
        let rewards: Vec<f64> = if k % 10 == 0 {
            vec![rng.next_f64(); n]
        } else {
            (0..n)
                .map(|_| if rng.next_f64() < 0.5 { 0.1 } else { 1.1 } + 0.01 * rng.normal())
                .collect()
        };
        let m = rewards.iter().sum::<f64>() / n as f64;
        let sd = (rewards.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / n as f64).sqrt();
        let a = group_advantage(&rewards).unwrap().advantages;
        if sd > STD_FLOOR {
            let am = a.iter().sum::<f64>() / n as f64;
            let asd = (a.iter().map(|x| (x - am) * (x - am)).sum::<f64>() / n as f64).sqrt();
            mean_err = mean_err.max(am.abs());
            std_err = std_err.max((asd - 1.0).abs());
        } else {
            flat += 1;
            flat_ok &= a.iter().all(|x| *x == 0.0);
        }
    }
    outcome(
        mean_err <= 1e-9 && std_err <= 1e-6 && flat_ok && flat > 0,
        format!("1e4 groups: max |mean| {mean_err:.1e}, max |std-1| {std_err:.1e}, {flat} flat groups all zero: {flat_ok}"),
    )
}

fn criterion_upsilon_and_determinism(gcpo_records: &[MetricsRecord]) -> Outcome {
    let alpha = TrainConfig::default().alpha;
    let bound = gcpo_records.iter().all(|r| {
        r.causal
            .as_ref()
            .is_some_and(|c| c.upsilon_min >= -alpha && c.upsilon_max <= alpha)
    });
    let worst = gcpo_records
        .iter()
        .filter_map(|r| r.causal.as_ref())
        .map(|c| c.upsilon_min.abs().max(c.upsilon_max.abs()))
        .fold(0.0, f64::max);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = standard(Algorithm::Gcpo, 30);
    let read = |name: &str| {
        let dir = tmp.path().join(name);
        train_to_dir(&cfg, &dir).unwrap();
        fs::read(dir.join(METRICS_FILE)).unwrap()
    };
    let (a, b) = (read("a"), read("b"));
    let identical = a == b && !a.is_empty();
    outcome(
        bound && identical,
        format!(
            "max |upsilon| {worst:.4} <= alpha {alpha} over {} steps: {bound}; two 30-step runs, metrics files \
             identical ({} bytes): {identical}",
            gcpo_records.len(),
            a.len()
        ),
    )
}

/// Expected reward of the untrained policy under temperature sampling,
/// estimated on held-out queries.
fn untrained_reward(cfg: &TrainConfig) -> f64 {
    let vocab = Vocab::arithmetic();
    let snap = PolicySnapshot::new(Trainer::new(cfg.clone()).unwrap().params(), 0);
    let (mut total, mut count) = (0.0, 0);
    for i in 0..256u64 {
        let q = gen_query(&cfg.task, &vocab, EVAL_SEED_START + i).unwrap();
        for j in 0..8u64 {
            let s = sample(
                &snap,
                &q.q.ids,
                cfg.max_len,
                cfg.sampling(),
                derive_seed(i, &[j]),
            )
            .unwrap();
            total += reward(&cfg.task, &vocab, &q, &s.tokens).total;
            count += 1;
        }
    }
    total / count as f64
}

fn late_reward(o: &TrainOutcome) -> f64 {
    let tail = &o.records[o.records.len() - 30..];
    tail.iter().map(|r| r.mean_reward).sum::<f64>() / tail.len() as f64
}

fn criterion_training(grpo: &TrainOutcome, gcpo: &TrainOutcome, seconds: f64) -> Outcome {
    let baseline = untrained_reward(&standard(Algorithm::Grpo, 300));
    let finite = |o: &TrainOutcome| {
        o.records.len() == 300
            && o.records
                .iter()
                .all(|r| r.grad_norm.is_finite() && r.objective.is_finite())
    };
    let (g, c) = (late_reward(grpo), late_reward(gcpo));
    let direction = g > baseline && c > baseline;
    let margin = g - baseline >= TRAINING_MARGIN && c - baseline >= TRAINING_MARGIN;
    let complete = finite(grpo) && finite(gcpo);
    outcome(
        direction && margin && complete && seconds <= 1800.0,
        format!(
            "untrained {baseline:.4}; last 30 steps: clipped {g:.4} (+{:.4}), causal {c:.4} (+{:.4}); \
             margin {TRAINING_MARGIN}; 300 steps each, all finite: {complete}; {seconds:.0} s",
            g - baseline,
            c - baseline
        ),
    )
}

fn criterion_comparison() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let arms = vec![
        ("grpo".to_string(), standard(Algorithm::Grpo, 20)),
        ("gcpo".to_string(), standard(Algorithm::Gcpo, 20)),
    ];
    let seeds = [1, 2, 3];
    let report = compare(&arms, &seeds, tmp.path()).unwrap();
    let table = fs::read_to_string(tmp.path().join("reports/compare.tsv")).unwrap();
    let complete = report.all_completed
        && report.rows.len() == 6
        && report.arms.len() == 2
        && report
            .rows
            .iter()
            .all(|r| r.pass_at_1.is_some() && r.eval_mean_reward.is_some())
        && table.lines().count() == 1 + 6 + 2
        && table.lines().filter(|l| l.contains("\tmean\t")).count() == 2;
    let mut diagnostics = true;
    let mut steps = 0;
    for seed in seeds {
        let text = fs::read_to_string(
            tmp.path()
                .join(format!("runs/gcpo_seed{seed}/{METRICS_FILE}")),
        )
        .unwrap();
        for line in text.lines() {
            let r: MetricsRecord = serde_json::from_str(line).unwrap();
            steps += 1;
            diagnostics &= r.causal.as_ref().is_some_and(|c| {
                [
                    c.upsilon_mean,
                    c.upsilon_min,
                    c.upsilon_max,
                    c.upsilon_neg_frac,
                    c.raw_ref_min,
                    c.raw_ref_max,
                ]
                .iter()
                .all(|v| v.is_finite())
            });
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            diagnostics &= v["causal"]["clamp_count"].is_u64();
        }
    }
    let means: Vec<String> = report
        .arms
        .iter()
        .map(|a| {
            format!(
                "{} pass@1 {:.3}",
                a.algorithm,
                a.mean_pass_at_1.unwrap_or(f64::NAN)
            )
        })
        .collect();
    outcome(
        complete && diagnostics && steps == 60,
        format!(
            "3 seeds x 2 arms, table complete: {complete}; causal diagnostics on all {steps} steps: {diagnostics}; {}",
            means.join(", ")
        ),
    )
}

fn main() {
    let mut lines = Vec::new();
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let line = format!(
            "criterion {id:>2} {} {name}: {} [{:.1} s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((o.passed, line));
    };

    run(1, "projection algebra", &mut criterion_projection_algebra);
    run(2, "risk gap identities", &mut criterion_risk_gaps);
    run(3, "collider signature", &mut criterion_collider_signature);
    run(4, "objective oracles", &mut criterion_objective_oracles);
    run(5, "reduction law", &mut criterion_reduction_law);
    run(6, "gradient correctness", &mut criterion_gradients);

    let t = Instant::now();
    let grpo = train(&standard(Algorithm::Grpo, 300)).unwrap();
    let gcpo = train(&standard(Algorithm::Gcpo, 300)).unwrap();
    let training_seconds = t.elapsed().as_secs_f64();

    run(7, "KL positivity", &mut || {
        criterion_kl_positivity(&gcpo.records)
    });
    run(8, "advantage normalisation", &mut criterion_advantages);
    run(9, "causal weight bound and replay", &mut || {
        criterion_upsilon_and_determinism(&gcpo.records)
    });
    run(10, "training improvement", &mut || {
        criterion_training(&grpo, &gcpo, training_seconds)
    });
    run(11, "comparison harness", &mut criterion_comparison);

    let failed = lines.iter().filter(|(p, _)| !p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
