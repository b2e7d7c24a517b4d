//! Prediction heads: a logistic head per static task on `s_k`, an LSTM
//! head per dynamic task on the rows of `U_k`, and the PR-AUC metric.

mod lstm;
mod metrics;
mod static_head;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{IrregularTensor, LabelTable};

pub use lstm::{DynamicGrads, DynamicHead, Gate, GATE_NAMES};
pub use metrics::pr_auc;
pub use static_head::{StaticGrads, StaticHead};

pub(crate) const PROB_FLOOR: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// All prediction heads of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskSet {
    pub statics: Vec<StaticHead>,
    pub dynamics: Vec<DynamicHead>,
}

impl TaskSet {
    /// Fresh heads for the named tasks: static heads at zero, LSTM gate
    /// matrices drawn from `N(0, 0.1²)`.
    pub fn init<R: Rng + ?Sized>(
        static_tasks: &[String],
        dynamic_tasks: &[String],
        rank: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            statics: static_tasks
                .iter()
                .map(|t| StaticHead::zeros(t.clone(), rank))
                .collect(),
            dynamics: dynamic_tasks
                .iter()
                .map(|t| DynamicHead::random(t.clone(), rank, hidden, 0.1, rng))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.statics.is_empty() && self.dynamics.is_empty()
    }

    pub fn len(&self) -> usize {
        self.statics.len() + self.dynamics.len()
    }

    /// Static task names followed by dynamic task names.
    pub fn task_names(&self) -> Vec<String> {
        self.statics
            .iter()
            .map(|h| h.task.clone())
            .chain(self.dynamics.iter().map(|h| h.task.clone()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.statics.iter().all(StaticHead::is_finite)
            && self.dynamics.iter().all(DynamicHead::is_finite)
    }

    pub fn to_record(&self) -> HeadsRecord {
        HeadsRecord {
            statics: self
                .statics
                .iter()
                .map(|h| StaticRecord {
                    task: h.task.clone(),
                    w: h.w.to_vec(),
                    b: h.b,
                })
                .collect(),
            dynamics: self
                .dynamics
                .iter()
                .map(|h| DynamicRecord {
                    task: h.task.clone(),
                    hidden: h.hidden,
                    gates: h
                        .gates
                        .iter()
                        .zip(GATE_NAMES)
                        .map(|(g, name)| GateRecord {
                            gate: name.to_string(),
                            w: rows(&g.w),
                            b: g.b.to_vec(),
                        })
                        .collect(),
                    w_out: h.w_out.to_vec(),
                    b_out: h.b_out,
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &HeadsRecord, rank: usize) -> Result<Self> {
        let statics = rec
            .statics
            .iter()
            .map(|r| {
                if r.w.len() != rank {
                    return Err(Error::shape(&r.task, format!("static head has {} weights for rank {rank}", r.w.len())));
                }
                Ok(StaticHead {
                    task: r.task.clone(),
                    w: Array1::from(r.w.clone()),
                    b: r.b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dynamics = rec
            .dynamics
            .iter()
            .map(|r| {
                let hd = r.hidden;
                if hd == 0 || r.gates.len() != 4 || r.w_out.len() != hd {
                    return Err(Error::shape(&r.task, "malformed dynamic head"));
                }
                let mut head = DynamicHead::zeros(r.task.clone(), rank, hd);
                for (slot, (g, name)) in head.gates.iter_mut().zip(r.gates.iter().zip(GATE_NAMES)) {
                    if g.gate != name {
                        return Err(Error::shape(&r.task, format!("expected gate '{name}', found '{}'", g.gate)));
                    }
                    slot.w = matrix(&g.w, hd, rank + hd).ok_or_else(|| Error::shape(&r.task, "gate matrix shape"))?;
                    if g.b.len() != hd {
                        return Err(Error::shape(&r.task, "gate bias length"));
                    }
                    slot.b = Array1::from(g.b.clone());
                }
                head.w_out = Array1::from(r.w_out.clone());
                head.b_out = r.b_out;
                Ok(head)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { statics, dynamics })
    }
}

pub(crate) fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Option<Array2<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((nrows, ncols), flat).ok()
}

/// Serialized heads, embedded in the checkpoint under `"heads"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadsRecord {
    #[serde(rename = "static", default)]
    pub statics: Vec<StaticRecord>,
    #[serde(rename = "dynamic", default)]
    pub dynamics: Vec<DynamicRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticRecord {
    pub task: String,
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateRecord {
    pub gate: String,
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicRecord {
    pub task: String,
    pub hidden: usize,
    pub gates: Vec<GateRecord>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

/// Labels re-indexed by slice position, aligned with a [`TaskSet`]:
/// `statics[n][k]` is the label of static task `n` for slice `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundLabels {
    pub statics: Vec<Vec<Option<u8>>>,
    pub dynamics: Vec<Vec<Option<Vec<u8>>>>,
}

impl BoundLabels {
    pub fn bind(table: &LabelTable, tensor: &IrregularTensor, heads: &TaskSet) -> Result<Self> {
        let k = tensor.n_slices();
        let statics = heads
            .statics
            .iter()
            .map(|h| {
                let by_id = table
                    .static_labels
                    .get(&h.task)
                    .ok_or_else(|| Error::config(format!("no static labels for task '{}'", h.task)))?;
                Ok((0..k)
                    .map(|i| by_id.get(&tensor.slice_ids()[i]).copied())
                    .collect())
            })
            .collect::<Result<Vec<Vec<Option<u8>>>>>()?;
        let dynamics = heads
            .dynamics
            .iter()
            .map(|h| {
                let by_id = table
                    .dynamic_labels
                    .get(&h.task)
                    .ok_or_else(|| Error::config(format!("no dynamic labels for task '{}'", h.task)))?;
                (0..k)
                    .map(|i| match by_id.get(&tensor.slice_ids()[i]) {
                        None => Ok(None),
                        Some(seq) if seq.len() == tensor.n_rows(i) => Ok(Some(seq.clone())),
                        Some(seq) => Err(Error::Label(format!(
                            "task '{}': {} labels for {} timesteps",
                            h.task,
                            seq.len(),
                            tensor.n_rows(i)
                        ))),
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<Option<Vec<u8>>>>>>()?;
        Ok(Self { statics, dynamics })
    }

    /// Every task needs at least one positive and one negative label.
    pub fn check_both_classes(&self, heads: &TaskSet) -> Result<()> {
        for (h, labels) in heads.statics.iter().zip(&self.statics) {
            let (pos, neg) = count(labels.iter().flatten().copied());
            if pos == 0 || neg == 0 {
                return Err(Error::Label(format!(
                    "task '{}' needs both classes in the training split ({pos} positive, {neg} negative)",
                    h.task
                )));
            }
        }
        for (h, labels) in heads.dynamics.iter().zip(&self.dynamics) {
            let (pos, neg) = count(labels.iter().flatten().flatten().copied());
            if pos == 0 || neg == 0 {
                return Err(Error::Label(format!(
                    "task '{}' needs both classes in the training split ({pos} positive, {neg} negative)",
                    h.task
                )));
            }
        }
        Ok(())
    }
}

fn count(it: impl Iterator<Item = u8>) -> (usize, usize) {
    it.fold((0, 0), |(p, n), y| if y == 1 { (p + 1, n) } else { (p, n + 1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = TaskSet::init(&["m".into()], &["v".into()], 3, 4, &mut rng);
        set.statics[0].w[1] = 0.25;
        set.dynamics[0].b_out = -0.5;
        let json = serde_json::to_string(&set.to_record()).unwrap();
        let back: HeadsRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(TaskSet::from_record(&back, 3).unwrap(), set);
    }
}
