use std::collections::BTreeMap;

use log::warn;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::fit::{fit_with, FitOutput};
use super::state::TrainerState;
use super::state::{stream, HEAD_STREAM};
use crate::error::{Error, Result};
use crate::heads::{pr_auc, BoundLabels, TaskSet};
use crate::linalg::{polar_factor, scale_columns};
use crate::model::{fit_score, FactorModel};
use crate::tensor::{split_tensor, IrregularTensor, LabelTable};

const POSTHOC_STREAM: u64 = 4;

/// Nonnegative least squares `min ½sᵀGs − cᵀs, s ≥ 0` by cyclic coordinate
/// descent.
fn nnls(g: &Array2<f64>, c: &Array1<f64>, s: &mut Array1<f64>) {
    let r = c.len();
    for _sweep in 0..500 {
        let mut delta: f64 = 0.0;
        for i in 0..r {
            if g[[i, i]] <= 0.0 {
                continue;
            }
            let grad = g.row(i).dot(s) - c[i];
            let next = (s[i] - grad / g[[i, i]]).max(0.0);
            delta = delta.max((next - s[i]).abs());
            s[i] = next;
        }
        if delta <= 1e-15 * (1.0 + s.iter().cloned().fold(0.0, f64::max)) {
            break;
        }
    }
}

/// Fits `Q_k` and `s_k` for every slice of `t` with `V` and `H` frozen.
///
/// Alternates an orthogonal Procrustes step for `Q_k` (so `Q_kᵀQ_k = I`)
/// with nonnegative least squares for `s_k`; unobserved entries are filled
/// with the current reconstruction before each sweep. Memberships start at
/// the mean of the model's training memberships.
pub fn project_slices(model: &FactorModel, t: &IrregularTensor, iters: usize) -> Result<FactorModel> {
    if t.n_features() != model.n_features() {
        return Err(Error::config(format!(
            "model has {} features, tensor has {}",
            model.n_features(),
            t.n_features()
        )));
    }
    let r = model.rank;
    let s0 = if model.n_slices() > 0 {
        model.s.iter().fold(Array1::zeros(r), |acc, s| acc + s) / model.n_slices() as f64
    } else {
        Array1::ones(r)
    };
    let h = &model.h;
    let v = &model.v;
    let vtv = v.t().dot(v);
    let mut qs = Vec::with_capacity(t.n_slices());
    let mut ss = Vec::with_capacity(t.n_slices());
    for k in 0..t.n_slices() {
        let x = t.slice(k);
        let mask = t.mask(k);
        let mut filled = x.clone();
        let mut s = s0.clone();
        let mut q = Array2::zeros((t.n_rows(k), r));
        for it in 0..iters.max(1) {
            let b = scale_columns(h.view(), &s).dot(&v.t());
            if it > 0 {
                let recon = q.dot(&b);
                for ((f, &obs), rc) in filled.iter_mut().zip(mask.iter()).zip(recon.iter()) {
                    if !obs {
                        *f = *rc;
                    }
                }
            }
            q = polar_factor(filled.dot(&b.t()).view());
            let u = q.dot(h);
            let g = &u.t().dot(&u) * &vtv;
            let c = u.t().dot(&filled).dot(v).diag().to_owned();
            let before = s.clone();
            nnls(&g, &c, &mut s);
            let change = (&s - &before).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            if it > 0 && change <= 1e-13 * (1.0 + s.iter().cloned().fold(0.0, f64::max)) {
                break;
            }
        }
        qs.push(q);
        ss.push(s);
    }
    FactorModel::new(qs, h.clone(), ss, v.clone())
}

/// Trains fresh heads on fixed factors (`U_k = Q_k H`), as done after an
/// unsupervised fit.
pub fn posthoc_heads(
    model: &FactorModel,
    t: &IrregularTensor,
    labels: &LabelTable,
    static_tasks: &[String],
    dynamic_tasks: &[String],
    cfg: &TrainConfig,
) -> Result<TaskSet> {
    let mut heads = TaskSet::init(static_tasks, dynamic_tasks, model.rank, cfg.hidden, &mut stream(cfg.seed, HEAD_STREAM));
    let bound = BoundLabels::bind(labels, t, &heads)?;
    bound.check_both_classes(&heads)?;
    let model = model.exported();
    let mut rng = stream(cfg.seed, POSTHOC_STREAM);
    let lr = cfg.head_lr * cfg.penalties.step_size;
    let mut order: Vec<usize> = (0..t.n_slices()).collect();
    for _ in 0..cfg.epochs_max {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for (n, head) in heads.statics.iter_mut().enumerate() {
                let grads: Vec<_> = batch
                    .iter()
                    .filter_map(|&k| bound.statics[n][k].map(|y| head.loss_and_grads(model.s[k].view(), y)))
                    .collect();
                let step = lr / grads.len().max(1) as f64;
                for g in &grads {
                    head.apply(g, step);
                }
            }
            for (n, head) in heads.dynamics.iter_mut().enumerate() {
                let grads = batch
                    .iter()
                    .filter_map(|&k| bound.dynamics[n][k].as_ref().map(|y| head.loss_and_grads(model.u[k].view(), y)))
                    .collect::<Result<Vec<_>>>()?;
                let step = lr / grads.len().max(1) as f64;
                for g in &grads {
                    head.apply(g, step);
                }
            }
        }
    }
    Ok(heads)
}

/// Test-set PR-AUC of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    /// `None` when the metric is undefined, for example with no positives.
    pub pr_auc: Option<f64>,
    pub n_scored: usize,
    pub n_positive: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Scores every head on `model`'s factors for the labeled slices of `t`.
/// Dynamic tasks pool all timesteps.
pub fn predict_scores(
    heads: &TaskSet,
    model: &FactorModel,
    t: &IrregularTensor,
    labels: &LabelTable,
) -> Result<BTreeMap<String, TaskScore>> {
    let model = model.exported();
    let mut out = BTreeMap::new();
    for head in &heads.statics {
        let (mut scores, mut ys) = (Vec::new(), Vec::new());
        if let Some(by_id) = labels.static_labels.get(&head.task) {
            for (k, id) in t.slice_ids().iter().enumerate() {
                if let Some(&y) = by_id.get(id) {
                    scores.push(head.forward(model.s[k].view()));
                    ys.push(y);
                }
            }
        }
        out.insert(head.task.clone(), score(&scores, &ys));
    }
    for head in &heads.dynamics {
        let (mut scores, mut ys) = (Vec::new(), Vec::new());
        if let Some(by_id) = labels.dynamic_labels.get(&head.task) {
            for (k, id) in t.slice_ids().iter().enumerate() {
                if let Some(seq) = by_id.get(id) {
                    scores.extend(head.forward(model.u[k].view()));
                    ys.extend_from_slice(seq);
                }
            }
        }
        out.insert(head.task.clone(), score(&scores, &ys));
    }
    Ok(out)
}

fn score(scores: &[f64], ys: &[u8]) -> TaskScore {
    let n_positive = ys.iter().filter(|&&y| y == 1).count();
    let (pr_auc, note) = match pr_auc(scores, ys) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    TaskScore { pr_auc, n_scored: ys.len(), n_positive, note }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fit_train: f64,
    pub fit_test: f64,
    pub pr_auc: BTreeMap<String, TaskScore>,
    pub convergence_epoch: usize,
    pub converged: bool,
}

/// Projects the test slices onto the trained model and scores FIT on both
/// sides plus PR-AUC for every head.
pub fn evaluate(
    fitted: &FitOutput,
    heads: &TaskSet,
    train: &IrregularTensor,
    test: &IrregularTensor,
    test_labels: Option<&LabelTable>,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    if test.n_slices() == 0 {
        return Err(Error::config("test set is empty"));
    }
    let projected = project_slices(&fitted.model, test, cfg.projection_iters)?;
    let pr_auc = match test_labels {
        Some(l) => predict_scores(heads, &projected, test, l)?,
        None => BTreeMap::new(),
    };
    for (task, s) in &pr_auc {
        if let Some(note) = &s.note {
            warn!("task '{task}': metric undefined ({note})");
        }
    }
    Ok(EvalReport {
        fit_train: fit_score(train, &fitted.model)?,
        fit_test: fit_score(test, &projected)?,
        pr_auc,
        convergence_epoch: fitted.convergence_epoch(),
        converged: fitted.converged_at.is_some(),
    })
}

/// A full train/evaluate cycle on one seeded split.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub fit: FitOutput,
    /// Heads used for test predictions: the jointly trained ones, or
    /// post-hoc heads after an unsupervised fit.
    pub heads: TaskSet,
    pub report: EvalReport,
    /// Slice ids of the training side, in model order.
    pub train_ids: Vec<String>,
}

/// Splits `t`, fits on the training side and evaluates on the rest. After
/// an unsupervised fit, heads for every labeled task are trained post hoc
/// on the frozen factors.
pub fn run_experiment(
    t: &IrregularTensor,
    labels: Option<&LabelTable>,
    cfg: &TrainConfig,
    train_fraction: f64,
    split_seed: u64,
) -> Result<Experiment> {
    run_experiment_with(t, labels, cfg, train_fraction, split_seed, |_| Ok(()))
}

/// [`run_experiment`] with a per-epoch callback on the training state.
pub fn run_experiment_with<F>(
    t: &IrregularTensor,
    labels: Option<&LabelTable>,
    cfg: &TrainConfig,
    train_fraction: f64,
    split_seed: u64,
    on_epoch: F,
) -> Result<Experiment>
where
    F: FnMut(&TrainerState) -> Result<()>,
{
    let empty = LabelTable::default();
    let all = labels.unwrap_or(&empty);
    let (train, test) = split_tensor(t, all, train_fraction, split_seed)?;
    let fitted = fit_with(&train.tensor, labels.map(|_| &train.labels), cfg, on_epoch)?;
    let heads = if cfg.mode == Mode::Unsupervised && !all.is_empty() {
        posthoc_heads(
            &fitted.model,
            &train.tensor,
            &train.labels,
            &all.static_tasks(),
            &all.dynamic_tasks(),
            cfg,
        )?
    } else {
        fitted.heads.clone()
    };
    let report = evaluate(&fitted, &heads, &train.tensor, &test.tensor, Some(&test.labels), cfg)?;
    Ok(Experiment {
        fit: fitted,
        heads,
        report,
        train_ids: train.tensor.slice_ids().to_vec(),
    })
}
