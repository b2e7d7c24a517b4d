//! PARAFAC2 factor storage, reconstruction and fit metrics, the gradients
//! of every factor subproblem, and the two proximal operators.

mod checkpoint;
mod objective;
mod prox;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, gram_minus_identity, scale_columns};
use crate::tensor::IrregularTensor;

pub use checkpoint::{Checkpoint, SliceFactors};
pub use objective::{Objective, Supervision, TaskWeights};
pub use prox::{nonneg_project, soft_threshold};

/// `X_k ≈ U_k diag(s_k) Vᵀ` with `U_k` coupled to `Q_k H`.
///
/// During training `U_k` is a free variable; [`FactorModel::export`] sets
/// it to `Q_k H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub rank: usize,
    pub q: Vec<Array2<f64>>,
    pub h: Array2<f64>,
    pub s: Vec<Array1<f64>>,
    pub v: Array2<f64>,
    pub u: Vec<Array2<f64>>,
}

impl FactorModel {
    /// Assembles a model with `U_k = Q_k H`.
    pub fn new(
        q: Vec<Array2<f64>>,
        h: Array2<f64>,
        s: Vec<Array1<f64>>,
        v: Array2<f64>,
    ) -> Result<Self> {
        let rank = h.nrows();
        if rank == 0 || h.ncols() != rank {
            return Err(Error::config(format!("H must be square and non-empty, got {:?}", h.dim())));
        }
        if v.ncols() != rank {
            return Err(Error::config(format!("V has {} columns for rank {rank}", v.ncols())));
        }
        if q.len() != s.len() {
            return Err(Error::config("Q and s have different slice counts"));
        }
        for (k, (qk, sk)) in q.iter().zip(&s).enumerate() {
            if qk.ncols() != rank || sk.len() != rank {
                return Err(Error::config(format!("slice {k}: factor width differs from rank {rank}")));
            }
        }
        let u = q.iter().map(|qk| qk.dot(&h)).collect();
        Ok(Self { rank, q, h, s, v, u })
    }

    pub fn n_slices(&self) -> usize {
        self.q.len()
    }

    pub fn n_features(&self) -> usize {
        self.v.nrows()
    }

    /// `Q_k H`
    pub fn coupled_u(&self, k: usize) -> Array2<f64> {
        self.q[k].dot(&self.h)
    }

    /// Sets every `U_k` to `Q_k H`.
    pub fn export(&mut self) {
        for k in 0..self.q.len() {
            self.u[k] = self.q[k].dot(&self.h);
        }
    }

    pub fn exported(&self) -> Self {
        let mut m = self.clone();
        m.export();
        m
    }

    pub fn check_against(&self, t: &IrregularTensor) -> Result<()> {
        if t.n_slices() != self.n_slices() {
            return Err(Error::config(format!(
                "model has {} slices, tensor has {}",
                self.n_slices(),
                t.n_slices()
            )));
        }
        if t.n_features() != self.n_features() {
            return Err(Error::config(format!(
                "model has {} features, tensor has {}",
                self.n_features(),
                t.n_features()
            )));
        }
        for k in 0..self.n_slices() {
            if self.q[k].nrows() != t.n_rows(k) || self.u[k].nrows() != t.n_rows(k) {
                return Err(Error::shape(
                    &t.slice_ids()[k],
                    format!("{} rows in tensor, {} in model", t.n_rows(k), self.q[k].nrows()),
                ));
            }
        }
        Ok(())
    }

    /// `‖Q_kᵀQ_k − I‖_F`
    pub fn orthogonality_error(&self, k: usize) -> f64 {
        frobenius_sq(gram_minus_identity(self.q[k].view()).view()).sqrt()
    }

    pub fn min_membership(&self) -> f64 {
        self.s
            .iter()
            .flat_map(|s| s.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        let fin = |a: &Array2<f64>| a.iter().all(|x| x.is_finite());
        fin(&self.h)
            && fin(&self.v)
            && self.q.iter().all(fin)
            && self.u.iter().all(fin)
            && self.s.iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Index of the largest membership in `s_k`; ties go to the lowest index.
    pub fn dominant_phenotype(&self, k: usize) -> usize {
        let s = &self.s[k];
        let mut best = 0;
        for r in 1..s.len() {
            if s[r] > s[best] {
                best = r;
            }
        }
        best
    }
}

/// Penalty coefficients and the step size shared by all block updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    /// Reconstruction weight, used when dynamic weighting is off.
    pub rho_tensor: f64,
    /// Per static task weight, used when dynamic weighting is off.
    pub rho_static: f64,
    /// Per dynamic task weight, used when dynamic weighting is off.
    pub rho_dynamic: f64,
    /// Coupling strength for `‖U_k − Q_k H‖²`.
    pub varrho1: f64,
    /// Orthogonality strength for `‖Q_kᵀQ_k − I‖²`.
    pub varrho2: f64,
    /// ℓ1 strength on `V`.
    pub c2: f64,
    pub step_size: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            rho_tensor: 1.0,
            rho_static: 1.0,
            rho_dynamic: 1.0,
            varrho1: 1e-4,
            varrho2: 1e-5,
            c2: 0.0,
            step_size: 1.0,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("rho_tensor", self.rho_tensor),
            ("rho_static", self.rho_static),
            ("rho_dynamic", self.rho_dynamic),
            ("varrho1", self.varrho1),
            ("varrho2", self.varrho2),
            ("c2", self.c2),
            ("step_size", self.step_size),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_slice(m: &FactorModel, k: usize) -> Result<()> {
    if k >= m.n_slices() {
        return Err(Error::config(format!("slice index {k} out of range for {} slices", m.n_slices())));
    }
    Ok(())
}

/// `U_k diag(s_k) Vᵀ` with the free `U_k`.
pub fn reconstruct_slice(m: &FactorModel, k: usize) -> Result<Array2<f64>> {
    check_slice(m, k)?;
    Ok(scale_columns(m.u[k].view(), &m.s[k]).dot(&m.v.t()))
}

fn masked_residual_sq(t: &IrregularTensor, k: usize, recon: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for ((x, &obs), r) in t.slice(k).iter().zip(t.mask(k).iter()).zip(recon.iter()) {
        if obs {
            let d = x - r;
            acc += d * d;
        }
    }
    acc
}

/// Mean squared reconstruction error over observed entries, using the free
/// `U_k`.
pub fn masked_l2_loss(t: &IrregularTensor, m: &FactorModel) -> Result<f64> {
    m.check_against(t)?;
    let n = t.observed_count();
    if n == 0 {
        return Err(Error::degenerate("no observed entries"));
    }
    let mut acc = 0.0;
    for k in 0..t.n_slices() {
        acc += masked_residual_sq(t, k, &reconstruct_slice(m, k)?);
    }
    Ok(acc / n as f64)
}

/// `1 − Σ‖X_k − Q_kH S_k Vᵀ‖²_Ω / Σ‖X_k‖²_Ω`
pub fn fit_score(t: &IrregularTensor, m: &FactorModel) -> Result<f64> {
    m.check_against(t)?;
    let denom = t.observed_sq_norm();
    if !(denom > 0.0) {
        return Err(Error::degenerate("observed entries are all zero"));
    }
    let mut num = 0.0;
    for k in 0..t.n_slices() {
        let recon = scale_columns(m.coupled_u(k).view(), &m.s[k]).dot(&m.v.t());
        num += masked_residual_sq(t, k, &recon);
    }
    Ok(1.0 - num / denom)
}
