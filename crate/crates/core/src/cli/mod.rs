//! Command-line front end. Every command writes plain CSV and JSON files
//! into an output directory.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{input_hash, run};
pub use config::{CliConfig, ModeArg, RunFlags, StepRuleArg};

#[derive(Debug, Parser)]
#[command(name = "parafac2-mtl", version, about = "Supervised PARAFAC2 with multi-task heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tensor, labels and ground-truth factors.
    Synth(SynthArgs),
    /// Train on a split of the tensor and score the held-out slices.
    Fit(RunFlags),
    /// Score a checkpoint on a tensor with frozen V, H and heads.
    Evaluate(EvaluateArgs),
    /// Top features per phenotype with subgroup averages.
    ExportPhenotypes(PhenotypeArgs),
    /// Subgroup mean trajectories of one feature.
    ExportTrajectories(TrajectoryArgs),
    /// Time epochs along K and J ladders and fit lines.
    Scaling(ScalingArgs),
    /// Run unsupervised, single-task and multi-task fits side by side.
    Compare(RunFlags),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub j: usize,
    /// Ground-truth rank.
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    #[arg(long, default_value_t = 5)]
    pub i_min: usize,
    #[arg(long, default_value_t = 15)]
    pub i_max: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub n_static: usize,
    #[arg(long, default_value_t = 1)]
    pub n_dynamic: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub tensor: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub projection_iters: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PhenotypeArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub tensor: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_n: usize,
    #[arg(long, default_value_t = 200)]
    pub projection_iters: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrajectoryArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub tensor: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub feature: String,
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 200)]
    pub projection_iters: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScalingArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800")]
    pub k_ladder: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "20,40,80,160")]
    pub j_ladder: Vec<usize>,
    /// Slice count held fixed while J varies.
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    /// Feature count held fixed while K varies.
    #[arg(long, default_value_t = 20)]
    pub j: usize,
    #[arg(long, default_value_t = 5)]
    pub rank: usize,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
