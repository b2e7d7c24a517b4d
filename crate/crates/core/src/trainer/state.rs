use std::time::Instant;

use log::warn;
use ndarray::{Array1, Array2, Dimension};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, StepRule, TrainConfig};
use crate::error::{Error, Result};
use crate::heads::{BoundLabels, TaskSet};
use crate::linalg::{gaussian, max_eigenvalue, orthonormalize_columns, scale_columns};
use crate::model::{
    fit_score, nonneg_project, soft_threshold, Checkpoint, FactorModel, Objective, Supervision,
    TaskWeights,
};
use crate::sdw::SdwState;
use crate::tensor::{IrregularTensor, LabelTable};

pub(crate) const FACTOR_STREAM: u64 = 0;
pub(crate) const HEAD_STREAM: u64 = 1;
pub(crate) const SHUFFLE_STREAM: u64 = 2;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Advisory messages when `rank` exceeds `min_k I_k` or `J`.
pub fn rank_warnings(t: &IrregularTensor, rank: usize) -> Vec<String> {
    let mut out = Vec::new();
    let min_rows = t.row_counts().into_iter().min().unwrap_or(0);
    if rank > min_rows {
        out.push(format!(
            "rank {rank} exceeds the shortest slice ({min_rows} rows); its Q_k cannot have orthonormal columns"
        ));
    }
    if rank > t.n_features() {
        out.push(format!("rank {rank} exceeds the feature count J = {}", t.n_features()));
    }
    out
}

/// Seeded initial factors: orthonormal `Q_k`, `H = I + N(0, 0.1²)`,
/// `s_k ~ U(0.1, 1)`, `V ~ N(0, 0.1²)` and `U_k = Q_k H`.
pub fn init_model(t: &IrregularTensor, cfg: &TrainConfig) -> Result<FactorModel> {
    let r = cfg.rank;
    if r == 0 {
        return Err(Error::config("rank must be at least 1"));
    }
    for w in rank_warnings(t, r) {
        warn!("{w}");
    }
    let mut rng = stream(cfg.seed, FACTOR_STREAM);
    let h = Array2::eye(r) + gaussian(&mut rng, r, r, 0.1);
    let v = gaussian(&mut rng, t.n_features(), r, 0.1);
    let mut q = Vec::with_capacity(t.n_slices());
    let mut s = Vec::with_capacity(t.n_slices());
    for k in 0..t.n_slices() {
        q.push(orthonormalize_columns(&gaussian(&mut rng, t.n_rows(k), r, 1.0)));
        s.push((0..r).map(|_| rng.random_range(0.1..1.0)).collect::<Array1<f64>>());
    }
    FactorModel::new(q, h, s, v)
}

/// Task names for `mode`, static tasks first.
pub(crate) fn select_tasks(mode: &Mode, labels: Option<&LabelTable>) -> Result<(Vec<String>, Vec<String>)> {
    match mode {
        Mode::Unsupervised => Ok((Vec::new(), Vec::new())),
        Mode::MultiTask => {
            let labels = labels
                .filter(|l| !l.is_empty())
                .ok_or_else(|| Error::config("multi_task mode needs a label table"))?;
            Ok((labels.static_tasks(), labels.dynamic_tasks()))
        }
        Mode::SingleTask(task) => {
            let labels = labels.ok_or_else(|| Error::config("single_task mode needs a label table"))?;
            if labels.static_labels.contains_key(task) {
                Ok((vec![task.clone()], Vec::new()))
            } else if labels.dynamic_labels.contains_key(task) {
                Ok((Vec::new(), vec![task.clone()]))
            } else {
                Err(Error::config(format!("task '{task}' not found in labels")))
            }
        }
    }
}

/// One row group of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `"tensor"` followed by the head tasks.
    pub tasks: Vec<String>,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    /// `Σ weight · loss`
    pub total: f64,
    pub fit: f64,
    /// Mean of `‖Q_kᵀQ_k − I‖_F` over slices.
    pub orthogonality: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Previous {
    u: Vec<Array2<f64>>,
    q: Vec<Array2<f64>>,
    h: Array2<f64>,
    s: Vec<Array1<f64>>,
    v: Array2<f64>,
}

impl Previous {
    fn of(m: &FactorModel) -> Self {
        Self {
            u: m.u.clone(),
            q: m.q.clone(),
            h: m.h.clone(),
            s: m.s.clone(),
            v: m.v.clone(),
        }
    }
}

/// `x + β (x − x_prev)`; stores `x` as the new previous iterate.
fn extrapolate<D: Dimension>(
    x: &ndarray::Array<f64, D>,
    prev: &mut ndarray::Array<f64, D>,
    beta: f64,
) -> ndarray::Array<f64, D> {
    let mut hat = x.clone();
    if beta != 0.0 {
        hat.zip_mut_with(prev, |h, p| *h += beta * (*h - p));
    }
    prev.assign(x);
    hat
}

fn finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|x| x.is_finite())
}

/// Everything the optimizer carries between epochs.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub model: FactorModel,
    pub heads: TaskSet,
    pub labels: BoundLabels,
    pub sdw: SdwState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochRecord>,
    slice_ids: Vec<String>,
    prev: Previous,
    shuffle: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(t: &IrregularTensor, labels: Option<&LabelTable>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (statics, dynamics) = select_tasks(&cfg.mode, labels)?;
        let model = init_model(t, cfg)?;
        let mut head_rng = stream(cfg.seed, HEAD_STREAM);
        let heads = TaskSet::init(&statics, &dynamics, cfg.rank, cfg.hidden, &mut head_rng);
        let bound = match labels {
            Some(l) if !heads.is_empty() => {
                l.validate(t)?;
                let b = BoundLabels::bind(l, t, &heads)?;
                b.check_both_classes(&heads)?;
                b
            }
            _ => BoundLabels::default(),
        };
        let sdw = SdwState::from_config(1 + heads.len(), &cfg.sdw)?;
        Ok(Self {
            prev: Previous::of(&model),
            model,
            heads,
            labels: bound,
            sdw,
            epoch: 0,
            log: Vec::new(),
            slice_ids: t.slice_ids().to_vec(),
            shuffle: stream(cfg.seed, SHUFFLE_STREAM),
        })
    }

    /// `"tensor"` followed by static then dynamic task names.
    pub fn task_names(&self) -> Vec<String> {
        std::iter::once("tensor".to_string())
            .chain(self.heads.task_names())
            .collect()
    }

    /// Checkpoint of the current iterate with `U_k = Q_k H`.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_model(&self.model, &self.slice_ids, Some(&self.heads))
    }

    fn weights_for(&self, flat: &[f64]) -> TaskWeights {
        let ns = self.heads.statics.len();
        TaskWeights {
            tensor: flat[0],
            statics: flat[1..1 + ns].to_vec(),
            dynamics: flat[1 + ns..].to_vec(),
        }
    }

    /// Weights in effect for the next epoch, flattened in task order.
    pub fn next_weights(&mut self, cfg: &TrainConfig) -> Vec<f64> {
        if cfg.sdw.enabled {
            match self.sdw.update_weights(self.epoch + 1) {
                Ok(w) => w,
                Err(e) => {
                    warn!("keeping previous task weights: {e}");
                    self.sdw.weights().to_vec()
                }
            }
        } else {
            let p = &cfg.penalties;
            std::iter::once(p.rho_tensor)
                .chain(self.heads.statics.iter().map(|_| p.rho_static))
                .chain(self.heads.dynamics.iter().map(|_| p.rho_dynamic))
                .collect()
        }
    }

    /// Per-task losses at the current iterate: mean squared reconstruction
    /// error over observed entries, then the mean cross-entropy of each head
    /// over its labeled slices.
    pub fn task_losses(&self, t: &IrregularTensor) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(1 + self.heads.len());
        out.push(crate::model::masked_l2_loss(t, &self.model)?);
        for (head, labels) in self.heads.statics.iter().zip(&self.labels.statics) {
            let (mut acc, mut n) = (0.0, 0usize);
            for (k, y) in labels.iter().enumerate() {
                if let Some(y) = *y {
                    acc += head.loss_and_grads(self.model.s[k].view(), y).loss;
                    n += 1;
                }
            }
            out.push(acc / n.max(1) as f64);
        }
        for (head, labels) in self.heads.dynamics.iter().zip(&self.labels.dynamics) {
            let (mut acc, mut n) = (0.0, 0usize);
            for (k, y) in labels.iter().enumerate() {
                if let Some(y) = y {
                    acc += head.loss_and_grads(self.model.u[k].view(), y)?.loss;
                    n += 1;
                }
            }
            out.push(acc / n.max(1) as f64);
        }
        Ok(out)
    }

    fn diverged(&self, step: &'static str, snapshot: &Option<Checkpoint>) -> Error {
        Error::Divergence {
            epoch: self.epoch + 1,
            step,
            last_finite: snapshot.clone().map(Box::new),
        }
    }

    /// One pass over seeded-shuffled mini-batches, followed by loss
    /// bookkeeping.
    pub fn epoch_step(&mut self, t: &IrregularTensor, cfg: &TrainConfig) -> Result<&EpochRecord> {
        let started = Instant::now();
        let flat = self.next_weights(cfg);
        let weights = self.weights_for(&flat);
        let snapshot = if self.model.is_finite() && self.heads.is_finite() {
            Some(self.checkpoint()?)
        } else {
            None
        };

        let mut order: Vec<usize> = (0..t.n_slices()).collect();
        order.shuffle(&mut self.shuffle);
        for batch in order.chunks(cfg.batch_size) {
            if let Err(e) = self.batch_step(t, batch, &weights, cfg) {
                return Err(match e {
                    Error::Divergence { step, .. } => self.diverged(step, &snapshot),
                    other => other,
                });
            }
        }

        let losses = self.task_losses(t)?;
        if !finite(&losses) {
            return Err(self.diverged("loss", &snapshot));
        }
        self.sdw.record(&losses)?;
        let total = losses.iter().zip(&flat).map(|(l, w)| l * w).sum();
        let fit = fit_score(t, &self.model)?;
        let k = self.model.n_slices();
        let orthogonality = (0..k).map(|i| self.model.orthogonality_error(i)).sum::<f64>() / k as f64;
        self.epoch += 1;
        let wall_ms = if cfg.deterministic {
            0
        } else {
            started.elapsed().as_millis() as u64
        };
        self.log.push(EpochRecord {
            epoch: self.epoch,
            tasks: self.task_names(),
            losses,
            weights: flat,
            total,
            fit,
            orthogonality,
            wall_ms,
        });
        Ok(self.log.last().expect("just pushed"))
    }

    fn batch_step(
        &mut self,
        t: &IrregularTensor,
        batch: &[usize],
        weights: &TaskWeights,
        cfg: &TrainConfig,
    ) -> Result<()> {
        let Self { model, heads, labels, prev, .. } = self;
        let p = &cfg.penalties;
        let beta = cfg.momentum;
        let lam = p.step_size;
        let step = |lip: f64| match cfg.step_rule {
            StepRule::Constant => lam,
            StepRule::Lipschitz if lip > 0.0 => lam / lip,
            StepRule::Lipschitz => 0.0,
        };
        let head_lr = cfg.head_lr * lam;
        let diverged = |step: &'static str| Error::Divergence { epoch: 0, step, last_finite: None };

        // U_k, then the dynamic heads that read it.
        {
            let obj = Objective::batch(t, batch, p, weights, supervision(heads, labels));
            let coef = obj.recon_coef();
            for &k in batch {
                model.u[k] = extrapolate(&model.u[k], &mut prev.u[k], beta);
                let g = obj.grad_u(t, model, k)?;
                let vs = scale_columns(model.v.view(), &model.s[k]);
                let mut lip = coef * max_eigenvalue(vs.t().dot(&vs).view()) + 2.0 * p.varrho1;
                for (n, head) in heads.dynamics.iter().enumerate() {
                    let w = weights.dynamics[n];
                    if w != 0.0 && labels.dynamics[n][k].is_some() {
                        lip += w / obj.head_norm * dynamic_curvature(head, cfg.rank);
                    }
                }
                model.u[k].scaled_add(-step(lip), &g);
                if !finite(&model.u[k]) {
                    return Err(diverged("U"));
                }
            }
        }
        for (n, head) in heads.dynamics.iter_mut().enumerate() {
            let grads = batch
                .iter()
                .filter_map(|&k| labels.dynamics[n][k].as_ref().map(|y| head.loss_and_grads(model.u[k].view(), y)))
                .collect::<Result<Vec<_>>>()?;
            let lr = head_lr / grads.len().max(1) as f64;
            for g in &grads {
                head.apply(g, lr);
            }
            if !head.is_finite() {
                return Err(diverged("dynamic head"));
            }
        }

        let obj = Objective::batch(t, batch, p, weights, supervision(heads, labels));
        let coef = obj.recon_coef();

        for &k in batch {
            model.q[k] = extrapolate(&model.q[k], &mut prev.q[k], beta);
            let g = obj.grad_q(model, k)?;
            let qq = model.q[k].t().dot(&model.q[k]);
            let hh = model.h.dot(&model.h.t());
            let lip = 2.0 * p.varrho1 * max_eigenvalue(hh.view())
                + 4.0 * p.varrho2 * (3.0 * max_eigenvalue(qq.view()) + 1.0);
            model.q[k].scaled_add(-step(lip), &g);
            if !finite(&model.q[k]) {
                return Err(diverged("Q"));
            }
        }

        model.h = extrapolate(&model.h, &mut prev.h, beta);
        let g = obj.grad_h(model, batch)?;
        let mut gram = Array2::zeros((cfg.rank, cfg.rank));
        for &k in batch {
            gram += &model.q[k].t().dot(&model.q[k]);
        }
        // The H objective sums over all K slices; the batch sum estimates
        // it after scaling by K/|B|.
        let scale = t.n_slices() as f64 / batch.len() as f64;
        model.h.scaled_add(-step(2.0 * scale * max_eigenvalue(gram.view())), &g);
        if !finite(&model.h) {
            return Err(diverged("H"));
        }

        let vtv = model.v.t().dot(&model.v);
        for &k in batch {
            model.s[k] = extrapolate(&model.s[k], &mut prev.s[k], beta);
            let g = obj.grad_s(t, model, k)?;
            let utu = model.u[k].t().dot(&model.u[k]);
            let mut lip = coef * max_eigenvalue((&utu * &vtv).view());
            for (n, head) in heads.statics.iter().enumerate() {
                let w = weights.statics[n];
                if w != 0.0 && labels.statics[n][k].is_some() {
                    lip += w / obj.head_norm * 0.25 * head.w.dot(&head.w);
                }
            }
            let mut next = model.s[k].clone();
            next.scaled_add(-step(lip), &g);
            model.s[k] = nonneg_project(&next);
            if !finite(&model.s[k]) {
                return Err(diverged("S"));
            }
        }
        for (n, head) in heads.statics.iter_mut().enumerate() {
            let grads: Vec<_> = batch
                .iter()
                .filter_map(|&k| labels.statics[n][k].map(|y| head.loss_and_grads(model.s[k].view(), y)))
                .collect();
            let lr = head_lr / grads.len().max(1) as f64;
            for g in &grads {
                head.apply(g, lr);
            }
            if !head.is_finite() {
                return Err(diverged("static head"));
            }
        }

        let obj = Objective::batch(t, batch, p, weights, None);
        model.v = extrapolate(&model.v, &mut prev.v, beta);
        let g = obj.grad_v(t, model, batch)?;
        let mut gram = Array2::zeros((cfg.rank, cfg.rank));
        for &k in batch {
            let us = scale_columns(model.u[k].view(), &model.s[k]);
            gram += &us.t().dot(&us);
        }
        let eta = step(obj.recon_coef() * max_eigenvalue(gram.view()));
        let mut next = model.v.clone();
        next.scaled_add(-eta, &g);
        model.v = soft_threshold(&next, eta * p.c2)?;
        if !finite(&model.v) {
            return Err(diverged("V"));
        }
        Ok(())
    }
}

fn supervision<'a>(heads: &'a TaskSet, labels: &'a BoundLabels) -> Option<Supervision<'a>> {
    (!heads.is_empty()).then_some(Supervision { heads, labels })
}

/// Rough curvature bound of a dynamic head's loss in its input: the output
/// layer contributes at most `‖w_out‖²/4` and the input weights are bounded
/// by their squared Frobenius norm.
fn dynamic_curvature(head: &crate::heads::DynamicHead, rank: usize) -> f64 {
    let w_in: f64 = head
        .gates
        .iter()
        .map(|g| g.w.slice(ndarray::s![.., ..rank]).iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    0.25 * head.w_out.dot(&head.w_out) * w_in.max(1e-12)
}
