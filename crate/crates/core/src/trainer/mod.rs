//! The training loop: snapshot, rollouts, objective, update, log.
//!
//! Every random draw is derived from the config seed, the step and the
//! query index, so a config replays to an identical metrics stream.

pub mod config;
pub mod optim;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::objective::{
    compute_causal, gcpo_objective, group_advantage, grpo_objective, CausalComponents, GroupBatch,
    ObjectiveOutput,
};
use crate::policy::{save_checkpoint, PolicyParams, PolicySnapshot, Vocab};
use crate::rng::derive_seed;
use crate::rollout::{expected_aux_generations, sample_group, RolloutRecord};
use crate::task::{
    evaluate_responder, gen_query, reward, EvalReport, TaskSpec, ACCURACY_REWARD, EVAL_SEED_START,
};

pub use config::{Algorithm, AuxDecoding, Schedule, TrainConfig};
pub use optim::{clip_grad_norm, lr_at, optimizer_step, AdamState};

const TAG_INIT: u64 = 0x1;
const TAG_STEP: u64 = 0x2;
const TAG_QUERY: u64 = 0x3;
const TAG_GROUP: u64 = 0x4;
const TAG_CAUSAL: u64 = 0x5;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "run.json";
pub const STATUS_FILE: &str = "run_status.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";
pub const NAN_DUMP_FILE: &str = "nan_dump.json";
pub const ROLLOUTS_FILE: &str = "rollouts.jsonl";

/// Causal diagnostics of one step, pooled over the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalDiagnostics {
    pub upsilon_mean: f64,
    pub upsilon_min: f64,
    pub upsilon_max: f64,
    pub upsilon_neg_frac: f64,
    pub clamp_count: usize,
    pub raw_ref_min: f64,
    pub raw_ref_max: f64,
    /// Responses whose similarity was undefined and got a zero weight.
    pub degenerate: usize,
    pub aux_generations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// Snapshot version every rollout of the step was drawn from.
    pub version: u64,
    pub objective: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub mean_reward: f64,
    pub mean_accuracy: f64,
    /// Greedy pass@1 on held-out queries after this step's update.
    pub pass_at_1: Option<f64>,
    pub mean_kl_ref: f64,
    pub mean_kl_causal: Option<f64>,
    pub min_kl_causal: Option<f64>,
    pub clip_fraction: f64,
    pub mean_abs_advantage: f64,
    pub causal: Option<CausalDiagnostics>,
    pub lr: f64,
    pub tokens: usize,
}

/// Written once, before the first step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub config_text: String,
    pub seed: u64,
    pub started_unix: u64,
    pub version: String,
    pub layout: Vec<String>,
}

/// Written at the end of a run, successful or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStatus {
    pub completed: bool,
    pub steps_done: usize,
    pub finished_unix: u64,
    pub error: Option<String>,
    pub final_eval: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub records: Vec<MetricsRecord>,
    pub final_eval: EvalReport,
}

/// Greedy evaluation on `cfg.n_eval` held-out queries starting at
/// `cfg.eval_seed_start`.
pub fn evaluate(snapshot: &PolicySnapshot, cfg: &TrainConfig) -> Result<EvalReport> {
    evaluate_range(
        snapshot,
        &cfg.task,
        cfg.n_eval,
        cfg.eval_seed_start,
        cfg.max_len,
    )
}

/// Like [`evaluate`] with an explicit seed range, which must not reach
/// into the training seeds.
pub fn evaluate_range(
    snapshot: &PolicySnapshot,
    task: &TaskSpec,
    n_eval: usize,
    seed_start: u64,
    max_len: usize,
) -> Result<EvalReport> {
    if seed_start < EVAL_SEED_START {
        return Err(validation(format!(
            "evaluation seeds from {seed_start} overlap the training range [0, {EVAL_SEED_START})"
        )));
    }
    if seed_start.checked_add(n_eval as u64).is_none() {
        return Err(validation("evaluation seed range overflows"));
    }
    evaluate_responder(
        snapshot,
        task,
        snapshot.params().vocab(),
        n_eval,
        seed_start,
        max_len,
    )
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

struct QueryResult {
    batch: GroupBatch,
    rewards: Vec<f64>,
    accuracy: Vec<f64>,
    advantages: Vec<f64>,
    causal: Option<CausalComponents>,
    record: RolloutRecord,
}

fn run_query(
    cfg: &TrainConfig,
    snapshot: &PolicySnapshot,
    step: usize,
    step_seed: u64,
    k: usize,
) -> Result<QueryResult> {
    let vocab = snapshot.params().vocab();
    let query_seed = derive_seed(step_seed, &[TAG_QUERY, k as u64]) % EVAL_SEED_START;
    let inst = gen_query(&cfg.task, vocab, query_seed)?;
    let group = sample_group(
        snapshot,
        &inst.q,
        cfg.n,
        cfg.max_len,
        cfg.sampling(),
        derive_seed(step_seed, &[TAG_GROUP, k as u64]),
    )?;
    let scored: Vec<_> = group
        .responses
        .iter()
        .map(|y| reward(&cfg.task, vocab, &inst, y))
        .collect();
    let rewards: Vec<f64> = scored.iter().map(|r| r.total).collect();
    let accuracy = scored.iter().map(|r| r.accuracy).collect();
    let adv = group_advantage(&rewards)?;
    let causal = match cfg.algorithm {
        Algorithm::Grpo => None,
        Algorithm::Gcpo => Some(compute_causal(
            snapshot,
            &group,
            &adv.advantages,
            &cfg.causal(),
            derive_seed(step_seed, &[TAG_CAUSAL, k as u64]),
        )?),
    };
    let weights = causal
        .as_ref()
        .map_or_else(|| adv.advantages.clone(), |c| c.weights.b.clone());
    let mut batch = GroupBatch::from_group(&group, group.old_logps.clone(), weights);
    batch.causal = causal.as_ref().map(CausalComponents::kl_inputs);
    let record = RolloutRecord {
        step: step as u64,
        query_seed,
        q: group.q.ids.clone(),
        responses: batch.responses.clone(),
        rewards: rewards.clone(),
        group_seeds: group.seeds.clone(),
        collider: causal.as_ref().map(|c| {
            std::iter::once(c.collider.y_n.ids.clone())
                .chain(c.collider.extras.iter().map(|e| e.ids.clone()))
                .collect()
        }),
        collider_seeds: causal.as_ref().map(|c| c.collider.seeds.clone()),
    };
    Ok(QueryResult {
        batch,
        rewards,
        accuracy,
        advantages: adv.advantages,
        causal,
        record,
    })
}

fn diagnostics(results: &[QueryResult]) -> Option<CausalDiagnostics> {
    let comps: Vec<&CausalComponents> = results.iter().filter_map(|r| r.causal.as_ref()).collect();
    if comps.is_empty() {
        return None;
    }
    let ups: Vec<f64> = comps
        .iter()
        .flat_map(|c| c.weights.upsilon.iter().copied())
        .collect();
    let ranges: Vec<(f64, f64)> = comps.iter().map(|c| c.ref_tokens.raw_range()).collect();
    Some(CausalDiagnostics {
        upsilon_mean: ups.iter().sum::<f64>() / ups.len() as f64,
        upsilon_min: ups.iter().copied().fold(f64::INFINITY, f64::min),
        upsilon_max: ups.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        upsilon_neg_frac: ups.iter().filter(|u| **u < 0.0).count() as f64 / ups.len() as f64,
        clamp_count: comps.iter().map(|c| c.ref_tokens.clamp_count).sum(),
        raw_ref_min: ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        raw_ref_max: ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
        degenerate: comps.iter().map(|c| c.degenerate).sum(),
        aux_generations: comps.iter().map(|c| c.aux_generations).sum(),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

#[derive(Serialize)]
struct NanDump<'a> {
    step: usize,
    version: u64,
    reason: String,
    objective: Option<f64>,
    grad_norm: Option<f64>,
    non_finite_grad: Option<usize>,
    non_finite_params: usize,
    rollouts: Vec<&'a RolloutRecord>,
}

/// Files written under an output directory.
struct RunFiles {
    dir: PathBuf,
    metrics: BufWriter<File>,
    rollouts: Option<BufWriter<File>>,
}

impl RunFiles {
    fn create(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::create_dir_all(dir.join("reports"))?;
        let text = cfg.to_text();
        fs::write(dir.join(RESOLVED_CONFIG_FILE), &text)?;
        let manifest = RunManifest {
            config: cfg.clone(),
            config_text: text,
            seed: cfg.seed,
            started_unix: unix_now(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            layout: [
                MANIFEST_FILE,
                RESOLVED_CONFIG_FILE,
                METRICS_FILE,
                "checkpoints/",
                "reports/",
            ]
            .map(String::from)
            .to_vec(),
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        let _ = fs::remove_file(dir.join(STATUS_FILE));
        let _ = fs::remove_file(dir.join(NAN_DUMP_FILE));
        let rollouts = if cfg.dump_rollouts {
            Some(BufWriter::new(File::create(dir.join(ROLLOUTS_FILE))?))
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: BufWriter::new(File::create(dir.join(METRICS_FILE))?),
            rollouts,
        })
    }

    fn status(&self, status: &RunStatus) -> Result<()> {
        fs::write(
            self.dir.join(STATUS_FILE),
            serde_json::to_string_pretty(status)?,
        )?;
        Ok(())
    }
}

/// Runs training without writing files.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone())?.run(None)
}

/// Runs training and writes the manifest, metrics, checkpoints and status
/// under `out`.
pub fn train_to_dir(cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone())?.run(Some(out))
}

pub struct Trainer {
    cfg: TrainConfig,
    params: PolicyParams,
    state: AdamState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = Vocab::arithmetic();
        cfg.task.validate(&vocab)?;
        let params = PolicyParams::init(
            cfg.model_shape(&vocab),
            &vocab,
            derive_seed(cfg.seed, &[TAG_INIT]),
        )?;
        let state = AdamState::new(params.len());
        Ok(Self { cfg, params, state })
    }

    /// Start from given parameters instead of a fresh initialisation.
    pub fn with_params(cfg: TrainConfig, params: PolicyParams) -> Result<Self> {
        cfg.validate()?;
        cfg.task.validate(params.vocab())?;
        let state = AdamState::new(params.len());
        Ok(Self { cfg, params, state })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn run(mut self, out: Option<&Path>) -> Result<TrainOutcome> {
        let mut files = out.map(|d| RunFiles::create(d, &self.cfg)).transpose()?;
        let mut records = Vec::with_capacity(self.cfg.steps);
        let result = self.run_steps(&mut files, &mut records);
        let final_eval = match &result {
            Ok(()) => Some(evaluate(
                &PolicySnapshot::new(&self.params, self.cfg.steps as u64),
                &self.cfg,
            )),
            Err(_) => None,
        }
        .transpose();
        let (final_eval, error) = match (result, final_eval) {
            (Ok(()), Ok(e)) => (e, None),
            (Err(e), _) | (Ok(()), Err(e)) => (None, Some(e)),
        };
        if let Some(f) = &files {
            f.status(&RunStatus {
                completed: error.is_none(),
                steps_done: records.len(),
                finished_unix: unix_now(),
                error: error.as_ref().map(ToString::to_string),
                final_eval,
            })?;
            if error.is_none() {
                save_checkpoint(&self.params, f.dir.join("checkpoints").join("final.ckpt"))?;
            }
        }
        match error {
            Some(e) => Err(e),
            None => Ok(TrainOutcome {
                params: self.params,
                records,
                final_eval: final_eval.expect("evaluated on success"),
            }),
        }
    }

    fn run_steps(
        &mut self,
        files: &mut Option<RunFiles>,
        records: &mut Vec<MetricsRecord>,
    ) -> Result<()> {
        for step in 0..self.cfg.steps {
            let record = self.step(step, files)?;
            if let Some(f) = files.as_mut() {
                serde_json::to_writer(&mut f.metrics, &record)?;
                f.metrics.write_all(b"\n")?;
                f.metrics.flush()?;
                let every = self.cfg.checkpoint_every;
                if every > 0 && (step + 1) % every == 0 {
                    let path = f
                        .dir
                        .join("checkpoints")
                        .join(format!("step_{}.ckpt", step + 1));
                    save_checkpoint(&self.params, path)?;
                }
            }
            records.push(record);
        }
        Ok(())
    }

    /// One outer step; returns its metrics record.
    fn step(&mut self, step: usize, files: &mut Option<RunFiles>) -> Result<MetricsRecord> {
        let cfg = &self.cfg;
        let snapshot = PolicySnapshot::new(&self.params, step as u64);
        let step_seed = derive_seed(cfg.seed, &[TAG_STEP, step as u64]);
        let results = (0..cfg.batch_queries)
            .into_par_iter()
            .map(|k| run_query(cfg, &snapshot, step, step_seed, k))
            .collect::<Result<Vec<_>>>()?;

        if let Some(rf) = files.as_mut().and_then(|f| f.rollouts.as_mut()) {
            for r in &results {
                serde_json::to_writer(&mut *rf, &r.record)?;
                rf.write_all(b"\n")?;
            }
            rf.flush()?;
        }

        let diag = diagnostics(&results);
        if let Some(d) = &diag {
            let expected = expected_aux_generations(cfg.n, cfg.m) * cfg.batch_queries as u64;
            if d.aux_generations != expected {
                return Err(Error::State(format!(
                    "step {step}: {} auxiliary generations, expected {expected}",
                    d.aux_generations
                )));
            }
        }

        let batch: Vec<GroupBatch> = results.iter().map(|r| r.batch.clone()).collect();
        let evaluated = match cfg.algorithm {
            Algorithm::Grpo => grpo_objective(&batch, snapshot.params(), &cfg.surrogate()),
            Algorithm::Gcpo => {
                gcpo_objective(&batch, snapshot.params(), &cfg.surrogate(), cfg.kappa)
            }
        };
        let mut out: ObjectiveOutput = match evaluated {
            Ok(o) => o,
            Err(Error::Numeric(msg)) => {
                return Err(self.abort(files, step, &results, msg, None, None, None));
            }
            Err(e) => return Err(e),
        };
        if cfg.inject_nan_at_step == Some(step) {
            out.value = f64::NAN;
            out.grad[0] = f64::NAN;
        }
        // Ascent on the objective is descent on its negation.
        let mut loss_grad: Vec<f64> = out.grad.iter().map(|g| -g).collect();
        let bad_grad = loss_grad.iter().filter(|g| !g.is_finite()).count();
        let grad_norm = clip_grad_norm(&mut loss_grad, cfg.max_grad_norm);
        if !out.value.is_finite() || bad_grad > 0 || !grad_norm.is_finite() {
            let msg = format!("non-finite objective or gradient at step {step}");
            return Err(self.abort(
                files,
                step,
                &results,
                msg,
                Some(out.value),
                Some(grad_norm),
                Some(bad_grad),
            ));
        }

        let lr = lr_at(cfg.schedule, cfg.lr, step, cfg.steps, cfg.warmup_ratio);
        optimizer_step(
            &mut self.params.values,
            &loss_grad,
            &mut self.state,
            lr,
            cfg.weight_decay,
        )?;
        self.params.round_to_f32();
        if !self.params.all_finite() {
            let msg = format!("parameters became non-finite at step {step}");
            return Err(self.abort(
                files,
                step,
                &results,
                msg,
                Some(out.value),
                Some(grad_norm),
                Some(0),
            ));
        }

        let pass_at_1 = if self.cfg.eval_every > 0 && (step + 1).is_multiple_of(self.cfg.eval_every)
        {
            Some(
                evaluate(
                    &PolicySnapshot::new(&self.params, step as u64 + 1),
                    &self.cfg,
                )?
                .pass_at_1,
            )
        } else {
            None
        };

        Ok(MetricsRecord {
            step,
            version: snapshot.version,
            objective: out.value,
            grad_norm,
            mean_reward: mean(results.iter().flat_map(|r| r.rewards.iter().copied())),
            mean_accuracy: mean(results.iter().flat_map(|r| {
                r.accuracy
                    .iter()
                    .map(|a| f64::from(u8::from(*a == ACCURACY_REWARD)))
            })),
            pass_at_1,
            mean_kl_ref: out.stats.mean_kl_ref,
            mean_kl_causal: out.stats.mean_kl_causal,
            min_kl_causal: out.stats.min_kl_causal,
            clip_fraction: out.stats.clip_fraction,
            mean_abs_advantage: mean(
                results
                    .iter()
                    .flat_map(|r| r.advantages.iter().map(|a| a.abs())),
            ),
            causal: diag,
            lr,
            tokens: out.stats.tokens,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn abort(
        &self,
        files: &Option<RunFiles>,
        step: usize,
        results: &[QueryResult],
        reason: String,
        objective: Option<f64>,
        grad_norm: Option<f64>,
        non_finite_grad: Option<usize>,
    ) -> Error {
        if let Some(f) = files {
            let dump = NanDump {
                step,
                version: step as u64,
                reason: reason.clone(),
                objective,
                grad_norm,
                non_finite_grad,
                non_finite_params: self.params.values.iter().filter(|v| !v.is_finite()).count(),
                rollouts: results.iter().map(|r| &r.record).collect(),
            };
            // NaN is not valid JSON; non-finite numbers are written as null.
            match serde_json::to_string_pretty(&dump) {
                Ok(text) => {
                    if let Err(e) = fs::write(f.dir.join(NAN_DUMP_FILE), text) {
                        return Error::Io(e);
                    }
                }
                Err(e) => return Error::Json(e),
            }
        }
        Error::Numeric(reason)
    }
}
