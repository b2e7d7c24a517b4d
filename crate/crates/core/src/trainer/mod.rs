//! Alternating block updates over `U`, `Q`, `H`, `S` and `V` with head
//! updates and dynamic task weighting, plus evaluation on held-out slices
//! and a timing probe.

mod config;
mod evaluate;
mod fit;
mod scaling;
mod state;

pub use config::{Mode, StepRule, TrainConfig};
pub use evaluate::{
    evaluate, posthoc_heads, predict_scores, project_slices, run_experiment, run_experiment_with, EvalReport, Experiment,
    TaskScore,
};
pub use fit::{fit, fit_with, has_converged, moving_average, FitOutput};
pub use scaling::{linear_fit, scaling_probe, LinearFit, ScalingAxis, ScalingPoint, ScalingReport};
pub use state::{init_model, rank_warnings, EpochRecord, TrainerState};
