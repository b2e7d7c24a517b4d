use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{Mode, StepRule, TrainConfig};

/// Run configuration file: the training settings plus input and output
/// locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub tensor: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub train_fraction: f64,
    /// Ranks swept by `compare`; empty means `train.rank`.
    pub ranks: Vec<usize>,
    /// Seeds swept by `compare`; empty means `train.seed`.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            tensor: None,
            labels: None,
            out_dir: None,
            train_fraction: 0.8,
            ranks: Vec::new(),
            seeds: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        if self.ranks.contains(&0) {
            return Err(Error::config("ranks must be positive"));
        }
        self.train.validate()
    }

    pub fn ranks(&self) -> Vec<usize> {
        if self.ranks.is_empty() {
            vec![self.train.rank]
        } else {
            self.ranks.clone()
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    MultiTask,
    SingleTask,
    Unsupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StepRuleArg {
    Lipschitz,
    Constant,
}

/// Flags shared by `fit` and `compare`. Each one overrides the matching
/// config-file field.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub tensor: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub sdw_c: Option<f64>,
    #[arg(long)]
    pub sdw_m: Option<usize>,
    /// Use the fixed task weights instead of the dynamic scheduler.
    #[arg(long)]
    pub no_sdw: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, value_enum)]
    pub step_rule: Option<StepRuleArg>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub rho_tensor: Option<f64>,
    #[arg(long)]
    pub rho_static: Option<f64>,
    #[arg(long)]
    pub rho_dynamic: Option<f64>,
    #[arg(long)]
    pub varrho1: Option<f64>,
    #[arg(long)]
    pub varrho2: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub head_lr: Option<f64>,
    #[arg(long)]
    pub projection_iters: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Comma-separated ranks for `compare`.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
    /// Comma-separated seeds for `compare`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

impl RunFlags {
    /// Loads the config file, if any, and applies the flags on top.
    pub fn resolve(&self) -> Result<CliConfig> {
        let mut c = match &self.config {
            Some(p) => CliConfig::load(p)?,
            None => CliConfig::default(),
        };
        set(&mut c.tensor, self.tensor.clone().map(Some));
        set(&mut c.labels, self.labels.clone().map(Some));
        set(&mut c.out_dir, self.out.clone().map(Some));
        set(&mut c.train_fraction, self.train_fraction);
        set(&mut c.ranks, self.ranks.clone());
        set(&mut c.seeds, self.seeds.clone());

        let t = &mut c.train;
        set(&mut t.rank, self.rank);
        set(&mut t.epochs_max, self.epochs);
        set(&mut t.sdw.c, self.sdw_c.map(Some));
        set(&mut t.sdw.m, self.sdw_m);
        if self.no_sdw {
            t.sdw.enabled = false;
        }
        set(&mut t.seed, self.seed);
        t.deterministic |= self.deterministic;
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.penalties.step_size, self.step_size);
        set(
            &mut t.step_rule,
            self.step_rule.map(|r| match r {
                StepRuleArg::Lipschitz => StepRule::Lipschitz,
                StepRuleArg::Constant => StepRule::Constant,
            }),
        );
        set(&mut t.momentum, self.momentum);
        set(&mut t.penalties.rho_tensor, self.rho_tensor);
        set(&mut t.penalties.rho_static, self.rho_static);
        set(&mut t.penalties.rho_dynamic, self.rho_dynamic);
        set(&mut t.penalties.varrho1, self.varrho1);
        set(&mut t.penalties.varrho2, self.varrho2);
        set(&mut t.penalties.c2, self.c2);
        set(&mut t.tol, self.tol);
        set(&mut t.window, self.window);
        set(&mut t.hidden, self.hidden);
        set(&mut t.head_lr, self.head_lr);
        set(&mut t.projection_iters, self.projection_iters);
        t.mode = resolve_mode(&t.mode, self.mode, self.task.as_deref())?;

        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve_mode(current: &Mode, flag: Option<ModeArg>, task: Option<&str>) -> Result<Mode> {
    match (flag, task) {
        (None, None) => Ok(current.clone()),
        (Some(ModeArg::MultiTask), None) => Ok(Mode::MultiTask),
        (Some(ModeArg::Unsupervised), None) => Ok(Mode::Unsupervised),
        (Some(ModeArg::SingleTask), Some(t)) => Ok(Mode::SingleTask(t.to_string())),
        (Some(ModeArg::SingleTask), None) => match current {
            Mode::SingleTask(t) => Ok(Mode::SingleTask(t.clone())),
            _ => Err(Error::config("--mode single_task needs --task")),
        },
        (None, Some(t)) => match current {
            Mode::SingleTask(_) => Ok(Mode::SingleTask(t.to_string())),
            _ => Err(Error::config("--task applies only to --mode single_task")),
        },
        (Some(_), Some(_)) => Err(Error::config("--task applies only to --mode single_task")),
    }
}
