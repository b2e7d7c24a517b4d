//! The smooth part of the training objective over a batch of slices `B`:
//!
//! ```text
//! ρ_X/|Ω_B| Σ_k ‖M_k ⊙ (U_k S_k Vᵀ − X_k)‖²
//!   + 1/|B| Σ_k [Σ_static ρ_n CE_n(s_k) + Σ_dynamic ρ_n CE_n(U_k)]
//!   + Σ_k [ϱ1 ‖U_k − Q_k H‖² + ϱ2 ‖Q_kᵀQ_k − I‖²]
//! ```
//!
//! and its block gradients. The ℓ1 term on `V` and the nonnegativity of
//! `s_k` are handled by proximal steps, not here.

use ndarray::{Array1, Array2};

use super::{check_slice, FactorModel, PenaltyConfig};
use crate::error::{Error, Result};
use crate::heads::{BoundLabels, TaskSet};
use crate::linalg::{frobenius_sq, gram_minus_identity, scale_columns};
use crate::tensor::IrregularTensor;

/// Effective per-task multipliers for one step: the reconstruction task,
/// then each static and dynamic head in [`TaskSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeights {
    pub tensor: f64,
    pub statics: Vec<f64>,
    pub dynamics: Vec<f64>,
}

impl TaskWeights {
    pub fn uniform(heads: &TaskSet, value: f64) -> Self {
        Self {
            tensor: value,
            statics: vec![value; heads.statics.len()],
            dynamics: vec![value; heads.dynamics.len()],
        }
    }

    pub fn reconstruction_only() -> Self {
        Self {
            tensor: 1.0,
            statics: Vec::new(),
            dynamics: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Supervision<'a> {
    pub heads: &'a TaskSet,
    pub labels: &'a BoundLabels,
}

#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub penalties: &'a PenaltyConfig,
    pub weights: &'a TaskWeights,
    pub supervision: Option<Supervision<'a>>,
    /// `|Ω_B|`
    pub recon_norm: f64,
    /// `|B|`
    pub head_norm: f64,
}

impl<'a> Objective<'a> {
    /// Objective over every slice of `t`.
    pub fn full(
        t: &IrregularTensor,
        penalties: &'a PenaltyConfig,
        weights: &'a TaskWeights,
        supervision: Option<Supervision<'a>>,
    ) -> Result<Self> {
        let n = t.observed_count();
        if n == 0 {
            return Err(Error::degenerate("no observed entries"));
        }
        Ok(Self {
            penalties,
            weights,
            supervision,
            recon_norm: n as f64,
            head_norm: t.n_slices() as f64,
        })
    }

    /// Objective restricted to the slices at `batch`.
    pub fn batch(
        t: &IrregularTensor,
        batch: &[usize],
        penalties: &'a PenaltyConfig,
        weights: &'a TaskWeights,
        supervision: Option<Supervision<'a>>,
    ) -> Self {
        let n: usize = batch.iter().map(|&k| t.observed_in(k)).sum();
        Self {
            penalties,
            weights,
            supervision,
            // An all-missing batch has a zero reconstruction gradient.
            recon_norm: n.max(1) as f64,
            head_norm: batch.len().max(1) as f64,
        }
    }

    /// `2ρ_X/|Ω_B|`
    pub fn recon_coef(&self) -> f64 {
        2.0 * self.weights.tensor / self.recon_norm
    }

    /// `M_k ⊙ (U_k S_k Vᵀ − X_k)`
    pub fn residual(&self, t: &IrregularTensor, m: &FactorModel, k: usize) -> Array2<f64> {
        let recon = scale_columns(m.u[k].view(), &m.s[k]).dot(&m.v.t());
        let mut res = recon;
        for ((r, x), &obs) in res.iter_mut().zip(t.slice(k).iter()).zip(t.mask(k).iter()) {
            *r = if obs { *r - x } else { 0.0 };
        }
        res
    }

    fn static_heads(&self) -> impl Iterator<Item = (usize, &'a crate::heads::StaticHead)> + '_ {
        self.supervision
            .into_iter()
            .flat_map(|s| s.heads.statics.iter().enumerate())
    }

    fn dynamic_heads(&self) -> impl Iterator<Item = (usize, &'a crate::heads::DynamicHead)> + '_ {
        self.supervision
            .into_iter()
            .flat_map(|s| s.heads.dynamics.iter().enumerate())
    }

    fn static_label(&self, n: usize, k: usize) -> Option<u8> {
        self.supervision.and_then(|s| s.labels.statics[n][k])
    }

    fn dynamic_label(&self, n: usize, k: usize) -> Option<&'a [u8]> {
        self.supervision
            .and_then(|s| s.labels.dynamics[n][k].as_deref())
    }

    /// Gradient of the `U_k` subproblem: reconstruction, coupling to
    /// `Q_k H`, and the dynamic heads backpropagated into `U_k`.
    pub fn grad_u(&self, t: &IrregularTensor, m: &FactorModel, k: usize) -> Result<Array2<f64>> {
        check_slice(m, k)?;
        let res = self.residual(t, m, k);
        let vs = scale_columns(m.v.view(), &m.s[k]);
        let mut g = res.dot(&vs) * self.recon_coef();
        let coupling = &m.u[k] - &m.coupled_u(k);
        g.scaled_add(2.0 * self.penalties.varrho1, &coupling);
        for (n, head) in self.dynamic_heads() {
            let w = self.weights.dynamics[n];
            if w == 0.0 {
                continue;
            }
            if let Some(y) = self.dynamic_label(n, k) {
                let dg = head.loss_and_grads(m.u[k].view(), y)?;
                g.scaled_add(w / self.head_norm, &dg.input);
            }
        }
        Ok(g)
    }

    /// `−2ϱ1 (U_k − Q_k H) Hᵀ + 4ϱ2 Q_k (Q_kᵀQ_k − I)`
    pub fn grad_q(&self, m: &FactorModel, k: usize) -> Result<Array2<f64>> {
        check_slice(m, k)?;
        let p = self.penalties;
        let coupling = &m.u[k] - &m.coupled_u(k);
        let mut g = coupling.dot(&m.h.t()) * (-2.0 * p.varrho1);
        let ortho = m.q[k].dot(&gram_minus_identity(m.q[k].view()));
        g.scaled_add(4.0 * p.varrho2, &ortho);
        Ok(g)
    }

    /// Gradient of `Σ_{k∈batch} ‖U_k − Q_k H‖²` with respect to `H`.
    pub fn grad_h(&self, m: &FactorModel, batch: &[usize]) -> Result<Array2<f64>> {
        let mut g = Array2::zeros(m.h.dim());
        for &k in batch {
            check_slice(m, k)?;
            let coupling = &m.u[k] - &m.coupled_u(k);
            g.scaled_add(-2.0, &m.q[k].t().dot(&coupling));
        }
        Ok(g)
    }

    /// Gradient with respect to the diagonal of `S_k`: reconstruction plus
    /// the static heads.
    pub fn grad_s(&self, t: &IrregularTensor, m: &FactorModel, k: usize) -> Result<Array1<f64>> {
        check_slice(m, k)?;
        let res = self.residual(t, m, k);
        // diag(Uᵀ R V)_r = Σ_ij U_ir R_ij V_jr
        let urv = m.u[k].t().dot(&res).dot(&m.v);
        let mut g = urv.diag().to_owned() * self.recon_coef();
        for (n, head) in self.static_heads() {
            let w = self.weights.statics[n];
            if w == 0.0 {
                continue;
            }
            if let Some(y) = self.static_label(n, k) {
                let sg = head.loss_and_grads(m.s[k].view(), y);
                g.scaled_add(w / self.head_norm, &sg.s);
            }
        }
        Ok(g)
    }

    /// Gradient of the reconstruction term with respect to `V`, summed over
    /// `batch`.
    pub fn grad_v(&self, t: &IrregularTensor, m: &FactorModel, batch: &[usize]) -> Result<Array2<f64>> {
        let mut g = Array2::zeros(m.v.dim());
        for &k in batch {
            check_slice(m, k)?;
            let res = self.residual(t, m, k);
            let us = scale_columns(m.u[k].view(), &m.s[k]);
            g.scaled_add(self.recon_coef(), &res.t().dot(&us));
        }
        Ok(g)
    }

    /// Unweighted squared residual `‖M_k ⊙ (U_k S_k Vᵀ − X_k)‖²`.
    pub fn residual_sq(&self, t: &IrregularTensor, m: &FactorModel, k: usize) -> f64 {
        frobenius_sq(self.residual(t, m, k).view())
    }

    /// Value of the smooth objective over `batch`.
    pub fn value(&self, t: &IrregularTensor, m: &FactorModel, batch: &[usize]) -> Result<f64> {
        let p = self.penalties;
        let mut recon = 0.0;
        let mut heads = 0.0;
        let mut penalty = 0.0;
        for &k in batch {
            check_slice(m, k)?;
            recon += self.residual_sq(t, m, k);
            for (n, head) in self.static_heads() {
                if let Some(y) = self.static_label(n, k) {
                    heads += self.weights.statics[n] * head.loss_and_grads(m.s[k].view(), y).loss;
                }
            }
            for (n, head) in self.dynamic_heads() {
                if let Some(y) = self.dynamic_label(n, k) {
                    heads += self.weights.dynamics[n] * head.loss_and_grads(m.u[k].view(), y)?.loss;
                }
            }
            penalty += p.varrho1 * frobenius_sq((&m.u[k] - &m.coupled_u(k)).view());
            penalty += p.varrho2 * frobenius_sq(gram_minus_identity(m.q[k].view()).view());
        }
        Ok(self.weights.tensor * recon / self.recon_norm + heads / self.head_norm + penalty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stationary_point_has_zero_factor_gradients() {
        let q = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let h = array![[1.0, 0.5], [0.0, 2.0]];
        let v = array![[1.0, 0.0], [0.3, 1.0]];
        let s = array![0.7, 1.2];
        let m = FactorModel::new(vec![q], h, vec![s], v).unwrap();
        let x = scale_columns(m.u[0].view(), &m.s[0]).dot(&m.v.t());
        let t = IrregularTensor::fully_observed(vec![x], vec!["a".into(), "b".into()], vec!["k".into()]).unwrap();
        let pen = PenaltyConfig { varrho1: 0.3, varrho2: 0.2, ..Default::default() };
        let w = TaskWeights::reconstruction_only();
        let obj = Objective::full(&t, &pen, &w, None).unwrap();
        let zero2 = |a: Array2<f64>| a.iter().all(|v| v.abs() < 1e-12);
        assert!(zero2(obj.grad_u(&t, &m, 0).unwrap()));
        assert!(zero2(obj.grad_q(&m, 0).unwrap()));
        assert!(zero2(obj.grad_h(&m, &[0]).unwrap()));
        assert!(zero2(obj.grad_v(&t, &m, &[0]).unwrap()));
        assert!(obj.grad_s(&t, &m, 0).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_entry_membership_gradient() {
        // X=[[1]], U=[[1,0]], V=[[1,0]], s=[0,0] → grad_s = [−2ρ, 0]
        let t = IrregularTensor::fully_observed(vec![array![[1.0]]], vec!["a".into()], vec!["k".into()]).unwrap();
        let mut m = FactorModel::new(vec![array![[1.0, 0.0]]], Array2::eye(2), vec![array![0.0, 0.0]], array![[1.0, 0.0]]).unwrap();
        m.u[0] = array![[1.0, 0.0]];
        let pen = PenaltyConfig::default();
        let rho = 0.7;
        let w = TaskWeights { tensor: rho, statics: vec![], dynamics: vec![] };
        let obj = Objective::full(&t, &pen, &w, None).unwrap();
        let g = obj.grad_s(&t, &m, 0).unwrap();
        assert!((g[0] + 2.0 * rho).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn fully_masked_slice_adds_nothing_to_v_gradient() {
        let t = IrregularTensor::new(
            vec![array![[1.0, 2.0]], array![[3.0, 4.0]]],
            vec![array![[true, true]], array![[false, false]]],
            vec!["a".into(), "b".into()],
            vec!["k0".into(), "k1".into()],
        )
        .unwrap();
        let m = FactorModel::new(
            vec![array![[1.0]], array![[2.0]]],
            array![[1.0]],
            vec![array![0.5], array![0.9]],
            array![[0.2], [0.4]],
        )
        .unwrap();
        let pen = PenaltyConfig::default();
        let w = TaskWeights::reconstruction_only();
        let obj = Objective::full(&t, &pen, &w, None).unwrap();
        assert_eq!(obj.grad_v(&t, &m, &[0, 1]).unwrap(), obj.grad_v(&t, &m, &[0]).unwrap());
    }
}
