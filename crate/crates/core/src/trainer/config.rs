use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PenaltyConfig;
use crate::sdw::SdwConfig;

/// Which prediction tasks take part in training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every task in the label table.
    #[default]
    MultiTask,
    /// One named task.
    SingleTask(String),
    /// Factorization only.
    Unsupervised,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::MultiTask => "multi_task",
            Mode::SingleTask(_) => "single_task",
            Mode::Unsupervised => "unsupervised",
        }
    }
}

/// How the step size of each block update is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `step_size / L`, with `L` a bound on the block's gradient Lipschitz
    /// constant at the current iterate.
    #[default]
    Lipschitz,
    /// `step_size` for every block.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rank: usize,
    pub epochs_max: usize,
    /// Slices per mini-batch.
    pub batch_size: usize,
    pub penalties: PenaltyConfig,
    pub sdw: SdwConfig,
    /// Convergence threshold on the relative change of the moving-average
    /// total loss. Zero disables early stopping.
    pub tol: f64,
    /// Moving-average length for the convergence test.
    pub window: usize,
    pub seed: u64,
    /// Writes zero wall times so that logs are reproducible byte for byte.
    pub deterministic: bool,
    pub mode: Mode,
    pub step_rule: StepRule,
    /// Extrapolation factor applied to every block before its gradient step.
    pub momentum: f64,
    /// LSTM hidden size.
    pub hidden: usize,
    /// Head learning rate, multiplied by `step_size`.
    pub head_lr: f64,
    /// Alternating sweeps when projecting unseen slices.
    pub projection_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            epochs_max: 200,
            batch_size: 10,
            penalties: PenaltyConfig::default(),
            sdw: SdwConfig::default(),
            tol: 1e-4,
            window: 10,
            seed: 0,
            deterministic: false,
            mode: Mode::MultiTask,
            step_rule: StepRule::Lipschitz,
            momentum: 0.0,
            hidden: 16,
            head_lr: 0.1,
            projection_iters: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank must be at least 1"));
        }
        if self.epochs_max == 0 {
            return Err(Error::config("epochs_max must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::config("window must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden size must be at least 1"));
        }
        if !(self.tol >= 0.0) || !self.tol.is_finite() {
            return Err(Error::config("tol must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.head_lr >= 0.0) || !self.head_lr.is_finite() {
            return Err(Error::config("head_lr must be finite and nonnegative"));
        }
        self.penalties.validate()?;
        self.sdw.validate()
    }
}
