//! Run configuration and its text format.
//!
//! ```text
//! [train]
//! algorithm = gcpo        # grpo | gcpo
//! steps = 300
//! seed = 0
//!
//! [causal]
//! kappa = 0.06
//! ```
//!
//! Every key is optional and falls back to the default below; unknown
//! sections and keys are errors reported with their line number.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::kv::{Entry, KvDocument, KvError};
use crate::objective::{CausalConfig, Metric, PhiSumMode, SurrogateConfig};
use crate::policy::{Decoding, ModelShape, Vocab};
use crate::task::{TaskSpec, EVAL_SEED_START};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Grpo,
    Gcpo,
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "grpo" => Ok(Algorithm::Grpo),
            "gcpo" => Ok(Algorithm::Gcpo),
            other => Err(format!("expected grpo or gcpo, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Grpo => "grpo",
            Algorithm::Gcpo => "gcpo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    Cosine,
}

impl FromStr for Schedule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(format!("expected constant or cosine, got `{other}`")),
        }
    }
}

/// How auxiliary continuations are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxDecoding {
    /// Same temperature as group sampling.
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub batch_queries: usize,
    pub n: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    pub max_len: usize,
    pub temperature: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_every: usize,

    pub eps: f64,
    pub beta: f64,

    pub alpha: f64,
    pub kappa: f64,
    pub m: usize,
    pub phi_sum_mode: PhiSumMode,
    pub metric: Metric,
    pub upsilon_floor: Option<f64>,
    pub aux_decoding: AuxDecoding,

    pub d: usize,
    pub layers: usize,
    pub max_context: usize,

    pub task: TaskSpec,

    pub n_eval: usize,
    pub eval_seed_start: u64,

    pub force_upsilon: Option<f64>,
    pub inject_nan_at_step: Option<usize>,
    pub dump_rollouts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Gcpo,
            steps: 300,
            batch_queries: 8,
            n: 4,
            lr: 3e-3,
            schedule: Schedule::Constant,
            warmup_ratio: 0.0,
            weight_decay: 0.01,
            max_grad_norm: Some(1.0),
            max_len: 6,
            temperature: 1.0,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            eps: 0.2,
            beta: 0.04,
            alpha: 2.0,
            kappa: 0.06,
            m: 2,
            phi_sum_mode: PhiSumMode::Mean,
            metric: Metric::Cosine,
            upsilon_floor: None,
            aux_decoding: AuxDecoding::Sample,
            d: 64,
            layers: 2,
            max_context: 256,
            task: TaskSpec::modadd(1),
            n_eval: 200,
            eval_seed_start: EVAL_SEED_START,
            force_upsilon: None,
            inject_nan_at_step: None,
            dump_rollouts: false,
        }
    }
}

fn optional<T: FromStr>(e: &Entry) -> Result<Option<T>, KvError>
where
    T::Err: std::fmt::Display,
{
    if e.value == "none" {
        Ok(None)
    } else {
        e.parse().map(Some)
    }
}

fn named<T: for<'de> Deserialize<'de>>(e: &Entry) -> Result<T, KvError> {
    serde_json::from_value(serde_json::Value::String(e.value.clone()))
        .map_err(|_| KvError::new(e.line, format!("bad value `{}` for `{}`", e.value, e.key)))
}

impl TrainConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDocument::parse(text)?;
        let mut c = TrainConfig::default();
        for s in &doc.sections {
            for e in &s.entries {
                let unknown =
                    || KvError::new(e.line, format!("unknown key `{}` in [{}]", e.key, s.name));
                match (s.name.as_str(), e.key.as_str()) {
                    ("train", "algorithm") => c.algorithm = e.parse()?,
                    ("train", "steps") => c.steps = e.parse()?,
                    ("train", "batch_queries") => c.batch_queries = e.parse()?,
                    ("train", "n") => c.n = e.parse()?,
                    ("train", "lr") => c.lr = e.parse()?,
                    ("train", "schedule") => c.schedule = e.parse()?,
                    ("train", "warmup_ratio") => c.warmup_ratio = e.parse()?,
                    ("train", "weight_decay") => c.weight_decay = e.parse()?,
                    ("train", "max_grad_norm") => c.max_grad_norm = optional(e)?,
                    ("train", "max_len") => c.max_len = e.parse()?,
                    ("train", "temperature") => c.temperature = e.parse()?,
                    ("train", "seed") => c.seed = e.parse()?,
                    ("train", "checkpoint_every") => c.checkpoint_every = e.parse()?,
                    ("train", "eval_every") => c.eval_every = e.parse()?,
                    ("objective", "eps") => c.eps = e.parse()?,
                    ("objective", "beta") => c.beta = e.parse()?,
                    ("causal", "alpha") => c.alpha = e.parse()?,
                    ("causal", "kappa") => c.kappa = e.parse()?,
                    ("causal", "m") => c.m = e.parse()?,
                    ("causal", "phi_sum_mode") => c.phi_sum_mode = named(e)?,
                    ("causal", "metric") => c.metric = named(e)?,
                    ("causal", "upsilon_floor") => c.upsilon_floor = optional(e)?,
                    ("causal", "aux_decoding") => c.aux_decoding = named(e)?,
                    ("model", "d") => c.d = e.parse()?,
                    ("model", "layers") => c.layers = e.parse()?,
                    ("model", "max_context") => c.max_context = e.parse()?,
                    ("task", "name") => c.task.name = e.value.clone(),
                    ("task", "digits") => c.task.digits = e.parse()?,
                    ("task", "delimiter") => c.task.delimiter = e.value.clone(),
                    ("eval", "n_eval") => c.n_eval = e.parse()?,
                    ("eval", "seed_start") => c.eval_seed_start = e.parse()?,
                    ("debug", "force_upsilon") => c.force_upsilon = optional(e)?,
                    ("debug", "inject_nan_at_step") => c.inject_nan_at_step = optional(e)?,
                    ("debug", "dump_rollouts") => c.dump_rollouts = e.parse()?,
                    ("train" | "objective" | "causal" | "model" | "task" | "eval" | "debug", _) => {
                        return Err(unknown().into())
                    }
                    _ => {
                        return Err(
                            KvError::new(s.line, format!("unknown section [{}]", s.name)).into(),
                        )
                    }
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(validation(format!("n must be at least 2, got {}", self.n)));
        }
        self.surrogate().validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(validation(format!("lr must be positive, got {}", self.lr)));
        }
        if self.steps == 0 || self.batch_queries == 0 || self.max_len == 0 {
            return Err(validation(
                "steps, batch_queries and max_len must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(validation("warmup_ratio must lie in [0, 1]"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(validation("weight_decay must be non-negative"));
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return Err(validation("max_grad_norm must be positive or none"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(validation("temperature must be positive"));
        }
        if self.algorithm == Algorithm::Gcpo {
            self.causal().validate()?;
        }
        if self.n_eval == 0 {
            return Err(validation("n_eval must be at least 1"));
        }
        if self.eval_seed_start < EVAL_SEED_START {
            return Err(validation(format!(
                "eval seed_start {} overlaps the training seed range [0, {EVAL_SEED_START})",
                self.eval_seed_start
            )));
        }
        self.task.validate(&Vocab::arithmetic())?;
        Ok(())
    }

    pub fn surrogate(&self) -> SurrogateConfig {
        SurrogateConfig {
            eps: self.eps,
            beta: self.beta,
        }
    }

    pub fn sampling(&self) -> Decoding {
        Decoding::Temperature(self.temperature)
    }

    pub fn causal(&self) -> CausalConfig {
        CausalConfig {
            alpha: self.alpha,
            kappa: self.kappa,
            m: self.m,
            phi_sum_mode: self.phi_sum_mode,
            metric: self.metric,
            upsilon_floor: self.upsilon_floor,
            force_upsilon: self.force_upsilon,
            max_len: self.max_len,
            decoding: match self.aux_decoding {
                AuxDecoding::Sample => self.sampling(),
                AuxDecoding::Greedy => Decoding::Greedy,
            },
        }
    }

    pub fn model_shape(&self, vocab: &Vocab) -> ModelShape {
        ModelShape {
            d: self.d,
            layers: self.layers,
            vocab_size: vocab.len(),
            max_context: self.max_context,
        }
    }

    /// Render in the config format; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:?}"));
        let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
        let mut s = String::new();
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "algorithm = {}", self.algorithm);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_queries = {}", self.batch_queries);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "schedule = {}", name(serde_json::json!(self.schedule)));
        let _ = writeln!(s, "warmup_ratio = {:?}", self.warmup_ratio);
        let _ = writeln!(s, "weight_decay = {:?}", self.weight_decay);
        let _ = writeln!(s, "max_grad_norm = {}", opt(self.max_grad_norm));
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "temperature = {:?}", self.temperature);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(
            s,
            "\n[objective]\neps = {:?}\nbeta = {:?}",
            self.eps, self.beta
        );
        let _ = writeln!(s, "\n[causal]");
        let _ = writeln!(s, "alpha = {:?}", self.alpha);
        let _ = writeln!(s, "kappa = {:?}", self.kappa);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(
            s,
            "phi_sum_mode = {}",
            name(serde_json::json!(self.phi_sum_mode))
        );
        let _ = writeln!(s, "metric = {}", name(serde_json::json!(self.metric)));
        let _ = writeln!(s, "upsilon_floor = {}", opt(self.upsilon_floor));
        let _ = writeln!(
            s,
            "aux_decoding = {}",
            name(serde_json::json!(self.aux_decoding))
        );
        let _ = writeln!(
            s,
            "\n[model]\nd = {}\nlayers = {}\nmax_context = {}",
            self.d, self.layers, self.max_context
        );
        let _ = writeln!(
            s,
            "\n[task]\nname = {}\ndigits = {}\ndelimiter = \"{}\"",
            self.task.name, self.task.digits, self.task.delimiter
        );
        let _ = writeln!(
            s,
            "\n[eval]\nn_eval = {}\nseed_start = {}",
            self.n_eval, self.eval_seed_start
        );
        let _ = writeln!(s, "\n[debug]");
        let _ = writeln!(s, "force_upsilon = {}", opt(self.force_upsilon));
        let _ = writeln!(
            s,
            "inject_nan_at_step = {}",
            self.inject_nan_at_step
                .map_or("none".to_string(), |v| v.to_string())
        );
        let _ = writeln!(s, "dump_rollouts = {}", self.dump_rollouts);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = TrainConfig::default();
        c.algorithm = Algorithm::Grpo;
        c.upsilon_floor = Some(-0.5);
        c.metric = Metric::Gaussian;
        c.aux_decoding = AuxDecoding::Greedy;
        c.inject_nan_at_step = Some(3);
        c.lr = 1e-6;
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = TrainConfig::parse("[train]\nsteps = 3\nstpes = 4\n").unwrap_err();
        assert!(matches!(&e, Error::Config(k) if k.line == 3), "{e}");
        let e = TrainConfig::parse("[train]\nsteps = x\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = TrainConfig::parse("[bogus]\na = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
        assert!(TrainConfig::parse("[causal]\nmetric = manhattan\n").is_err());
    }

    #[test]
    fn invariants() {
        assert!(TrainConfig::parse("[train]\nn = 1\n").is_err());
        assert!(TrainConfig::parse("[objective]\neps = 1.5\n").is_err());
        assert!(TrainConfig::parse("[train]\nlr = 0\n").is_err());
        assert!(TrainConfig::parse("[causal]\nkappa = -1\n").is_err());
        assert!(TrainConfig::parse("[eval]\nseed_start = 5\n").is_err());
        assert!(TrainConfig::parse("[task]\nname = sorting\n").is_err());
    }
}
