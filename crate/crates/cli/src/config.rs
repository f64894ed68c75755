use std::path::{Path, PathBuf};

use serde::Deserialize;

use celo::baselines::{half_power_sweep, DEFAULT_SWEEP_HI, DEFAULT_SWEEP_LO};
use celo::eval::Criterion;
use celo::metatrain::{stage_budgets, AdamWConfig, PesConfig, DEFAULT_RULE_FRACTION};
use celo::nn::Activation;
use celo::tasks::{
    default_heldout_configs, default_meta_train_configs, meta_train_task, DataSource, TaskConfig,
};

use crate::optimizers::OptimizerSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub workers: usize,
    pub tasks: TasksSection,
    pub metatrain: MetaTrainSection,
    pub eval: EvalSection,
    pub score: ScoreSection,
    pub io: IoSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            tasks: TasksSection::default(),
            metatrain: MetaTrainSection::default(),
            eval: EvalSection::default(),
            score: ScoreSection::default(),
            io: IoSection::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TasksSection {
    /// Number of built-in synthetic meta-training tasks (ignored when `datasets` is set).
    pub meta_train: usize,
    pub data_seed: u64,
    /// Dataset files used as meta-training tasks instead of the synthetic ones.
    pub datasets: Vec<DatasetEntry>,
    /// Which tasks `sweep-adam`, `evaluate` and `score` run on.
    pub eval_suite: SuiteChoice,
}

impl Default for TasksSection {
    fn default() -> Self {
        Self { meta_train: 2, data_seed: 7, datasets: Vec::new(), eval_suite: SuiteChoice::Heldout }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SuiteChoice {
    Heldout,
    MetaTrain,
    All,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_activation() -> String {
    "relu".into()
}

fn default_batch() -> usize {
    64
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetaTrainSection {
    pub sigma: f64,
    pub truncation: usize,
    pub pairs: usize,
    pub min_horizon: usize,
    pub max_horizon: usize,
    /// Total budget, split between the stages by `rule_fraction`.
    pub meta_iterations: usize,
    pub rule_fraction: f64,
    /// Explicit per-stage budgets; override the split when given.
    pub rule_iterations: Option<usize>,
    pub scheduler_iterations: Option<usize>,
    pub meta_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub checkpoint_every: usize,
}

impl Default for MetaTrainSection {
    fn default() -> Self {
        let pes = PesConfig::default();
        Self {
            sigma: pes.sigma,
            truncation: pes.truncation,
            pairs: pes.pairs,
            min_horizon: pes.min_horizon,
            max_horizon: pes.max_horizon,
            meta_iterations: 1000,
            rule_fraction: DEFAULT_RULE_FRACTION,
            rule_iterations: None,
            scheduler_iterations: None,
            meta_lr: pes.meta_lr,
            weight_decay: 0.0,
            clip_norm: 1.0,
            checkpoint_every: 100,
        }
    }
}

impl MetaTrainSection {
    pub fn budgets(&self) -> (usize, usize) {
        let (rule, sched) = stage_budgets(self.meta_iterations, self.rule_fraction);
        (self.rule_iterations.unwrap_or(rule), self.scheduler_iterations.unwrap_or(sched))
    }

    pub fn pes(&self, iterations: usize) -> PesConfig {
        PesConfig {
            sigma: self.sigma,
            truncation: self.truncation,
            pairs: self.pairs,
            min_horizon: self.min_horizon,
            max_horizon: self.max_horizon,
            meta_iterations: iterations,
            meta_lr: self.meta_lr,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { weight_decay: self.weight_decay, clip_norm: self.clip_norm, ..AdamWConfig::new(self.meta_lr) }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub optimizers: Vec<String>,
    pub sweep_lo: f64,
    pub sweep_hi: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            steps: celo::eval::DEFAULT_STEPS,
            seeds: vec![1, 2, 3],
            optimizers: vec!["celo".into(), "adam_best".into()],
            sweep_lo: DEFAULT_SWEEP_LO,
            sweep_hi: DEFAULT_SWEEP_HI,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSection {
    pub criteria: Vec<String>,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self { criteria: vec!["final_loss".into(), "speedup".into()] }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub output_dir: PathBuf,
    /// Trained optimizer used by `evaluate`; defaults to the one `meta-train` writes.
    pub checkpoint: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("celo-out"), checkpoint: None }
    }
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let mut config = parse_config(&text)?;
    // Relative paths inside the file are relative to the file.
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for d in &mut config.tasks.datasets {
        rebase(&mut d.path);
    }
    rebase(&mut config.io.output_dir);
    if let Some(c) = &mut config.io.checkpoint {
        rebase(c);
    }
    Ok(config)
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn parse_activation(s: &str) -> Result<Activation, ConfigError> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        other => Err(invalid(format!("unknown activation {other:?} (expected relu or tanh)"))),
    }
}

impl Config {
    /// Range checks and path checks that every command needs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        if self.tasks.datasets.is_empty() && self.tasks.meta_train == 0 {
            return Err(invalid("tasks.meta_train must be at least 1"));
        }
        for d in &self.tasks.datasets {
            if !d.path.is_file() {
                return Err(invalid(format!("dataset {:?} not found at {}", d.name, d.path.display())));
            }
            if d.name.is_empty() || d.name.contains("__") || d.name.contains('/') {
                return Err(invalid(format!("dataset name {:?} must be nonempty without '__' or '/'", d.name)));
            }
            if d.hidden.contains(&0) || d.batch_size == 0 {
                return Err(invalid(format!("dataset {:?}: widths and batch size must be positive", d.name)));
            }
            parse_activation(&d.activation)?;
        }
        let m = &self.metatrain;
        let (rule, sched) = m.budgets();
        m.pes(rule.max(sched)).validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&m.rule_fraction) {
            return Err(invalid("metatrain.rule_fraction must be in [0, 1]"));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let rejected = !(m.clip_norm > 0.0) || !(m.weight_decay >= 0.0);
        if rejected || m.checkpoint_every == 0 {
            return Err(invalid("metatrain: clip_norm > 0, weight_decay >= 0 and checkpoint_every >= 1 required"));
        }
        let e = &self.eval;
        if e.steps < celo::eval::FINAL_WINDOW {
            return Err(invalid(format!("eval.steps must be at least {}", celo::eval::FINAL_WINDOW)));
        }
        if e.seeds.is_empty() {
            return Err(invalid("eval.seeds must not be empty"));
        }
        let mut seen = e.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != e.seeds.len() {
            return Err(invalid("eval.seeds contains duplicates"));
        }
        half_power_sweep(e.sweep_lo, e.sweep_hi).map_err(|err| invalid(err.to_string()))?;
        self.optimizer_specs()?;
        self.criteria()?;
        Ok(())
    }

    pub fn optimizer_specs(&self) -> Result<Vec<OptimizerSpec>, ConfigError> {
        if self.eval.optimizers.is_empty() {
            return Err(invalid("eval.optimizers must not be empty"));
        }
        let specs = self
            .eval
            .optimizers
            .iter()
            .map(|s| s.parse::<OptimizerSpec>().map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut labels: Vec<String> = specs.iter().map(OptimizerSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != specs.len() {
            return Err(invalid("eval.optimizers contains duplicates"));
        }
        Ok(specs)
    }

    pub fn criteria(&self) -> Result<Vec<Criterion>, ConfigError> {
        if self.score.criteria.is_empty() {
            return Err(invalid("score.criteria must not be empty"));
        }
        self.score
            .criteria
            .iter()
            .map(|c| c.parse::<Criterion>().map_err(|e| invalid(e.to_string())))
            .collect()
    }

    pub fn meta_train_configs(&self) -> Result<Vec<TaskConfig>, ConfigError> {
        if self.tasks.datasets.is_empty() {
            return Ok(default_meta_train_configs(self.tasks.meta_train, self.tasks.data_seed));
        }
        self.tasks
            .datasets
            .iter()
            .map(|d| {
                let mut cfg = meta_train_task(d.name.clone(), DataSource::File(d.path.clone()));
                cfg.hidden = d.hidden.clone();
                cfg.activation = parse_activation(&d.activation)?;
                cfg.batch_size = d.batch_size;
                Ok(cfg)
            })
            .collect()
    }

    pub fn eval_configs(&self) -> Result<Vec<TaskConfig>, ConfigError> {
        let heldout = || default_heldout_configs(self.tasks.data_seed);
        Ok(match self.tasks.eval_suite {
            SuiteChoice::Heldout => heldout(),
            SuiteChoice::MetaTrain => self.meta_train_configs()?,
            SuiteChoice::All => {
                let mut all = self.meta_train_configs()?;
                all.extend(heldout());
                all
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, Config::default());
        c.validate().unwrap();
        assert_eq!(c.metatrain.budgets(), (700, 300));
    }

    #[test]
    fn sections_parse() {
        let c = parse_config(
            r#"
            seed = 5
            workers = 2
            [metatrain]
            rule_iterations = 20
            scheduler_iterations = 6
            [eval]
            seeds = [1, 2]
            optimizers = ["celo_no_scheduler", "adam:1e-3"]
            [io]
            output_dir = "out"
            "#,
        )
        .unwrap();
        assert_eq!((c.seed, c.workers), (5, 2));
        assert_eq!(c.metatrain.budgets(), (20, 6));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(parse_config("sed = 1").is_err());
        assert!(parse_config("[metatrain]\nsigma = -1.0").unwrap().validate().is_err());
        assert!(parse_config("[eval]\nseeds = []").unwrap().validate().is_err());
        assert!(parse_config("[eval]\noptimizers = [\"rmsprop\"]").unwrap().validate().is_err());
        assert!(parse_config("[score]\ncriteria = [\"accuracy\"]").unwrap().validate().is_err());
        assert!(parse_config("[[tasks.datasets]]\nname = \"x\"\npath = \"/nonexistent/x.bin\"")
            .unwrap()
            .validate()
            .is_err());
    }
}
