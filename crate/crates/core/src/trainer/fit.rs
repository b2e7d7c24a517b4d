use log::info;

use super::config::TrainConfig;
use super::state::{EpochRecord, TrainerState};
use crate::error::Result;
use crate::heads::TaskSet;
use crate::model::FactorModel;
use crate::tensor::{IrregularTensor, LabelTable};

#[derive(Debug, Clone)]
pub struct FitOutput {
    /// Trained model with `U_k = Q_k H`.
    pub model: FactorModel,
    pub heads: TaskSet,
    pub log: Vec<EpochRecord>,
    /// Epoch at which the convergence test first passed.
    pub converged_at: Option<usize>,
}

impl FitOutput {
    pub fn epochs_run(&self) -> usize {
        self.log.len()
    }

    /// Converged epoch, or the number of epochs run when the cap was hit.
    pub fn convergence_epoch(&self) -> usize {
        self.converged_at.unwrap_or(self.log.len())
    }

    pub fn final_fit(&self) -> Option<f64> {
        self.log.last().map(|r| r.fit)
    }
}

/// Moving averages over `window` epochs of the total weighted loss.
pub fn moving_average(totals: &[f64], window: usize) -> Vec<f64> {
    totals
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// True when the relative change between the last two moving averages is
/// below `tol`.
pub fn has_converged(log: &[EpochRecord], window: usize, tol: f64) -> bool {
    if tol <= 0.0 || log.len() < window + 1 {
        return false;
    }
    let totals: Vec<f64> = log[log.len() - window - 1..].iter().map(|r| r.total).collect();
    let ma = moving_average(&totals, window);
    let (before, after) = (ma[0], ma[1]);
    if before == 0.0 {
        return after == 0.0;
    }
    ((after - before) / before).abs() < tol
}

/// Trains until convergence or `epochs_max`, calling `on_epoch` after each
/// epoch.
pub fn fit_with<F>(
    t: &IrregularTensor,
    labels: Option<&LabelTable>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<FitOutput>
where
    F: FnMut(&TrainerState) -> Result<()>,
{
    let mut st = TrainerState::new(t, labels, cfg)?;
    let mut converged_at = None;
    while st.epoch < cfg.epochs_max {
        st.epoch_step(t, cfg)?;
        on_epoch(&st)?;
        if has_converged(&st.log, cfg.window, cfg.tol) {
            converged_at = Some(st.epoch);
            info!("converged at epoch {}", st.epoch);
            break;
        }
    }
    let TrainerState { mut model, heads, log, .. } = st;
    model.export();
    Ok(FitOutput { model, heads, log, converged_at })
}

pub fn fit(t: &IrregularTensor, labels: Option<&LabelTable>, cfg: &TrainConfig) -> Result<FitOutput> {
    fit_with(t, labels, cfg, |_| Ok(()))
}
