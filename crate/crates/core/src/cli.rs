//! Command-line front end: `train`, `scm-verify` and `compare`.
//!
//! Exit codes: 0 on success, 1 on bad input or a failed check, 2 when a
//! training run aborts on a non-finite value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::{build_joint, read_scm_file, run_suite, FiniteScm, SuiteOptions, SuiteReport};
use crate::trainer::{train_to_dir, Algorithm, TrainConfig, TrainOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GCPO_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "gcpo",
    version,
    about = "Group policy optimization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy from a config file.
    Train(TrainArgs),
    /// Check projection identities and collider dependence on exact SCMs.
    ScmVerify(ScmVerifyArgs),
    /// Train two configs over a list of seeds and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    #[arg(long, value_parser = parse_algorithm)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScmVerifyArgs {
    /// SCM definition file.
    #[arg(required_unless_present = "random", conflicts_with = "random")]
    pub file: Option<PathBuf>,
    /// Verify this many seeded random SCMs instead of a file.
    #[arg(long)]
    pub random: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report to `<out>/reports/scm_verify.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub config_a: PathBuf,
    pub config_b: PathBuf,
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse()
}

/// Parse arguments, run the command and return the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_FAILURE
            } else {
                EXIT_OK
            };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::ScmVerify(a) => cmd_scm_verify(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

/// Load a config and apply command-line overrides.
pub fn load_config(
    path: &Path,
    algorithm: Option<Algorithm>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read config {}: {e}", path.display()),
        ))
    })?;
    let mut cfg = TrainConfig::parse(&text)?;
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> i32 {
    let result =
        load_config(&a.config, a.algorithm, a.seed).and_then(|cfg| train_to_dir(&cfg, &a.out));
    match result {
        Ok(o) => {
            let last = o.records.last().map_or(f64::NAN, |r| r.mean_reward);
            println!(
                "trained {} steps: last mean_reward {last:.4}, eval pass@1 {:.4}, eval mean_reward {:.4}",
                o.records.len(),
                o.final_eval.pass_at_1,
                o.final_eval.mean_reward
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmVerifyEntry {
    pub label: String,
    pub report: SuiteReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmVerifyReport {
    pub scms: Vec<ScmVerifyEntry>,
    pub passed: bool,
}

/// Run the suite on a file or on `count` seeded random SCMs.
pub fn scm_verify(file: Option<&Path>, random: Option<u64>, seed: u64) -> Result<ScmVerifyReport> {
    let scms: Vec<(String, FiniteScm)> = match (file, random) {
        (Some(p), _) => vec![(p.display().to_string(), read_scm_file(p)?)],
        (None, Some(k)) => (0..k)
            .map(|i| {
                Ok((
                    format!("random[{i}] seed {seed}"),
                    FiniteScm::sweep_member(seed, i)?,
                ))
            })
            .collect::<Result<_>>()?,
        (None, None) => return Err(Error::Validation("give an SCM file or --random".into())),
    };
    let opts = SuiteOptions {
        seed,
        ..SuiteOptions::default()
    };
    let mut entries = Vec::with_capacity(scms.len());
    for (label, scm) in scms {
        let report = run_suite(&build_joint(&scm)?, &opts)?;
        entries.push(ScmVerifyEntry { label, report });
    }
    let passed = entries.iter().all(|e| e.report.passed);
    Ok(ScmVerifyReport {
        scms: entries,
        passed,
    })
}

pub fn cmd_scm_verify(a: &ScmVerifyArgs) -> i32 {
    let report = match scm_verify(a.file.as_deref(), a.random, a.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let text = match serde_json::to_string_pretty(&report) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    println!("{text}");
    if let Some(out) = &a.out {
        let dir = out.join("reports");
        if let Err(e) =
            fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("scm_verify.json"), &text))
        {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    }
    if report.passed {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub arm: String,
    pub algorithm: String,
    pub seed: u64,
    pub completed: bool,
    pub steps_done: usize,
    pub pass_at_1: Option<f64>,
    pub eval_mean_reward: Option<f64>,
    /// Mean training reward over the last tenth of the steps.
    pub final_train_reward: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub algorithm: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_pass_at_1: Option<f64>,
    pub mean_eval_reward: Option<f64>,
    pub mean_final_train_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub arms: Vec<ArmSummary>,
    pub all_completed: bool,
}

fn tail_reward(o: &TrainOutcome) -> f64 {
    let k = (o.records.len() / 10).max(1);
    let tail = &o.records[o.records.len() - k..];
    tail.iter().map(|r| r.mean_reward).sum::<f64>() / k as f64
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Train both arms on every seed, one run directory per arm and seed, and
/// write `reports/compare.{tsv,json}` under `out`.
pub fn compare(arms: &[(String, TrainConfig)], seeds: &[u64], out: &Path) -> Result<CompareReport> {
    let mut rows = Vec::new();
    for (arm, base) in arms {
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..base.clone()
            };
            let dir = out.join("runs").join(format!("{arm}_seed{seed}"));
            let row = match train_to_dir(&cfg, &dir) {
                Ok(o) => CompareRow {
                    arm: arm.clone(),
                    algorithm: cfg.algorithm.to_string(),
                    seed,
                    completed: true,
                    steps_done: o.records.len(),
                    pass_at_1: Some(o.final_eval.pass_at_1),
                    eval_mean_reward: Some(o.final_eval.mean_reward),
                    final_train_reward: Some(tail_reward(&o)),
                    error: None,
                },
                Err(e) => CompareRow {
                    arm: arm.clone(),
                    algorithm: cfg.algorithm.to_string(),
                    seed,
                    completed: false,
                    steps_done: count_lines(&dir.join(crate::trainer::METRICS_FILE)),
                    pass_at_1: None,
                    eval_mean_reward: None,
                    final_train_reward: None,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    let summaries = arms
        .iter()
        .map(|(arm, cfg)| {
            let mine: Vec<&CompareRow> = rows.iter().filter(|r| &r.arm == arm).collect();
            ArmSummary {
                arm: arm.clone(),
                algorithm: cfg.algorithm.to_string(),
                runs: mine.len(),
                failed: mine.iter().filter(|r| !r.completed).count(),
                mean_pass_at_1: mean_of(mine.iter().map(|r| r.pass_at_1)),
                mean_eval_reward: mean_of(mine.iter().map(|r| r.eval_mean_reward)),
                mean_final_train_reward: mean_of(mine.iter().map(|r| r.final_train_reward)),
            }
        })
        .collect();
    let report = CompareReport {
        all_completed: rows.iter().all(|r| r.completed),
        rows,
        arms: summaries,
    };
    let dir = out.join("reports");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("compare.tsv"), compare_table(&report))?;
    fs::write(
        dir.join("compare.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

fn count_lines(path: &Path) -> usize {
    fs::read_to_string(path).map_or(0, |t| t.lines().count())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Tab-separated table: one row per run, then one `mean` row per arm.
pub fn compare_table(report: &CompareReport) -> String {
    let mut s = String::from(
        "arm\talgorithm\tseed\tstatus\tsteps\tpass_at_1\teval_reward\tfinal_train_reward\n",
    );
    for r in &report.rows {
        let status = if r.completed { "ok" } else { "failed" };
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{status}\t{}\t{}\t{}\t{}",
            r.arm,
            r.algorithm,
            r.seed,
            r.steps_done,
            cell(r.pass_at_1),
            cell(r.eval_mean_reward),
            cell(r.final_train_reward)
        );
    }
    for a in &report.arms {
        let _ = writeln!(
            s,
            "{}\t{}\tmean\t{}/{} ok\t-\t{}\t{}\t{}",
            a.arm,
            a.algorithm,
            a.runs - a.failed,
            a.runs,
            cell(a.mean_pass_at_1),
            cell(a.mean_eval_reward),
            cell(a.mean_final_train_reward)
        );
    }
    s
}

pub fn cmd_compare(a: &CompareArgs) -> i32 {
    let arms = [("a", &a.config_a), ("b", &a.config_b)]
        .into_iter()
        .map(|(name, path)| Ok((name.to_string(), load_config(path, None, None)?)))
        .collect::<Result<Vec<_>>>();
    let arms = match arms {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    match compare(&arms, &a.seeds, &a.out) {
        Ok(report) => {
            print!("{}", compare_table(&report));
            if report.all_completed {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Size the global worker pool from [`THREADS_ENV`] when it is set.
pub fn init_thread_pool() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v.parse().map_err(|_| {
            Error::Validation(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        if threads == 0 {
            return Err(Error::Validation(format!(
                "{THREADS_ENV} must be at least 1"
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::State(e.to_string()))?;
    }
    Ok(())
}
