//! Single-layer LSTM head producing one probability per timestep, with
//! full backpropagation through time into both its parameters and the
//! input sequence (the rows of `U_k`).

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{clamp_probability, sigmoid};
use crate::error::{Error, Result};
use crate::linalg::gaussian;

pub const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

/// Affine map of `[x_t; h_{t-1}]` feeding one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    /// `hidden × (input + hidden)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Gate {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w: Array2::zeros((hidden, input + hidden)),
            b: Array1::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicHead {
    pub task: String,
    pub hidden: usize,
    pub input: usize,
    /// Input, forget, output and candidate gates, in that order.
    pub gates: [Gate; 4],
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGrads {
    pub loss: f64,
    pub gates: [Gate; 4],
    pub w_out: Array1<f64>,
    pub b_out: f64,
    /// Gradient with respect to the input sequence; same shape as `U_k`.
    pub input: Array2<f64>,
}

struct Trace {
    z: Vec<Array1<f64>>,
    act: Vec<[Array1<f64>; 4]>,
    c: Vec<Array1<f64>>,
    h: Vec<Array1<f64>>,
    p: Vec<f64>,
}

impl DynamicHead {
    pub fn zeros(task: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            task: task.into(),
            hidden,
            input,
            gates: std::array::from_fn(|_| Gate::zeros(hidden, input)),
            w_out: Array1::zeros(hidden),
            b_out: 0.0,
        }
    }

    /// Gate matrices drawn from `N(0, sd²)`; everything else zero.
    pub fn random<R: Rng + ?Sized>(
        task: impl Into<String>,
        input: usize,
        hidden: usize,
        sd: f64,
        rng: &mut R,
    ) -> Self {
        let mut head = Self::zeros(task, input, hidden);
        for g in head.gates.iter_mut() {
            g.w = gaussian(rng, hidden, input + hidden, sd);
        }
        head
    }

    fn run(&self, u: ArrayView2<f64>) -> Trace {
        let n = u.nrows();
        let hd = self.hidden;
        let mut tr = Trace {
            z: Vec::with_capacity(n),
            act: Vec::with_capacity(n),
            c: Vec::with_capacity(n),
            h: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
        };
        let mut h_prev = Array1::<f64>::zeros(hd);
        let mut c_prev = Array1::<f64>::zeros(hd);
        for row in u.axis_iter(Axis(0)) {
            let mut z = Array1::zeros(self.input + hd);
            z.slice_mut(s![..self.input]).assign(&row);
            z.slice_mut(s![self.input..]).assign(&h_prev);
            let pre: [Array1<f64>; 4] = std::array::from_fn(|g| self.gates[g].w.dot(&z) + &self.gates[g].b);
            let act = [
                pre[INPUT].mapv(sigmoid),
                pre[FORGET].mapv(sigmoid),
                pre[OUTPUT].mapv(sigmoid),
                pre[CANDIDATE].mapv(f64::tanh),
            ];
            let c = &act[FORGET] * &c_prev + &act[INPUT] * &act[CANDIDATE];
            let h = &act[OUTPUT] * &c.mapv(f64::tanh);
            let p = sigmoid(self.w_out.dot(&h) + self.b_out);
            tr.z.push(z);
            tr.act.push(act);
            tr.c.push(c.clone());
            tr.h.push(h.clone());
            tr.p.push(p);
            h_prev = h;
            c_prev = c;
        }
        tr
    }

    /// Per-timestep probabilities; hidden and cell state start at zero.
    pub fn forward(&self, u: ArrayView2<f64>) -> Vec<f64> {
        self.run(u).p
    }

    /// Mean per-timestep cross-entropy and its gradients by untruncated BPTT.
    pub fn loss_and_grads(&self, u: ArrayView2<f64>, y: &[u8]) -> Result<DynamicGrads> {
        let n = u.nrows();
        if y.len() != n {
            return Err(Error::shape(
                &self.task,
                format!("{} labels for a sequence of length {n}", y.len()),
            ));
        }
        if u.ncols() != self.input {
            return Err(Error::shape(
                &self.task,
                format!("input width {} but head expects {}", u.ncols(), self.input),
            ));
        }
        let tr = self.run(u);
        let hd = self.hidden;
        let inv_n = 1.0 / n as f64;

        let mut loss = 0.0;
        let mut g_gates: [Gate; 4] = std::array::from_fn(|_| Gate::zeros(hd, self.input));
        let mut g_wout = Array1::<f64>::zeros(hd);
        let mut g_bout = 0.0;
        let mut g_input = Array2::<f64>::zeros((n, self.input));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);

        for t in 0..n {
            let yt = y[t] as f64;
            let pc = clamp_probability(tr.p[t]);
            loss -= yt * pc.ln() + (1.0 - yt) * (1.0 - pc).ln();
        }
        loss *= inv_n;

        for t in (0..n).rev() {
            let dlogit = (tr.p[t] - y[t] as f64) * inv_n;
            g_wout.scaled_add(dlogit, &tr.h[t]);
            g_bout += dlogit;

            let dh = &self.w_out * dlogit + &dh_next;
            let act = &tr.act[t];
            let tanh_c = tr.c[t].mapv(f64::tanh);
            let c_prev = if t > 0 { tr.c[t - 1].clone() } else { Array1::zeros(hd) };

            let d_o = &dh * &tanh_c;
            let dc = &dh * &act[OUTPUT] * &tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;
            let d_i = &dc * &act[CANDIDATE];
            let d_g = &dc * &act[INPUT];
            let d_f = &dc * &c_prev;
            dc_next = &dc * &act[FORGET];

            let da: [Array1<f64>; 4] = [
                &d_i * &act[INPUT].mapv(|a| a * (1.0 - a)),
                &d_f * &act[FORGET].mapv(|a| a * (1.0 - a)),
                &d_o * &act[OUTPUT].mapv(|a| a * (1.0 - a)),
                &d_g * &act[CANDIDATE].mapv(|a| 1.0 - a * a),
            ];

            let z = &tr.z[t];
            let mut dz = Array1::<f64>::zeros(self.input + hd);
            for g in 0..4 {
                let col = da[g].view().insert_axis(Axis(1));
                let row = z.view().insert_axis(Axis(0));
                g_gates[g].w += &col.dot(&row);
                g_gates[g].b += &da[g];
                dz += &self.gates[g].w.t().dot(&da[g]);
            }
            g_input.row_mut(t).assign(&dz.slice(s![..self.input]));
            dh_next = dz.slice(s![self.input..]).to_owned();
        }

        Ok(DynamicGrads {
            loss,
            gates: g_gates,
            w_out: g_wout,
            b_out: g_bout,
            input: g_input,
        })
    }

    pub fn apply(&mut self, grads: &DynamicGrads, lr: f64) {
        for (g, d) in self.gates.iter_mut().zip(&grads.gates) {
            g.w.scaled_add(-lr, &d.w);
            g.b.scaled_add(-lr, &d.b);
        }
        self.w_out.scaled_add(-lr, &grads.w_out);
        self.b_out -= lr * grads.b_out;
    }

    pub fn is_finite(&self) -> bool {
        self.b_out.is_finite()
            && self.w_out.iter().all(|x| x.is_finite())
            && self
                .gates
                .iter()
                .all(|g| g.w.iter().chain(g.b.iter()).all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_half_everywhere() {
        let head = DynamicHead::zeros("v", 2, 3);
        let p = head.forward(array![[1.0, -2.0], [0.5, 3.0], [7.0, 0.1]].view());
        assert_eq!(p, vec![0.5; 3]);
    }

    #[test]
    fn zero_parameters_positive_labels_cost_ln2() {
        let head = DynamicHead::zeros("v", 2, 3);
        let g = head
            .loss_and_grads(array![[1.0, -2.0], [0.5, 3.0]].view(), &[1, 1])
            .unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_output_weight_ignores_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = DynamicHead::random("v", 2, 4, 0.5, &mut rng);
        head.b_out = 0.3;
        let p = head.forward(array![[1.0, -2.0], [0.5, 3.0]].view());
        for v in p {
            assert!((v - sigmoid(0.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn one_step_matches_hand_unrolled_cell() {
        // hidden = 1, input = 1; z = [x, h0] = [x, 0]
        let mut head = DynamicHead::zeros("v", 1, 1);
        let wx = [0.5, -0.3, 0.8, 1.2];
        let bs = [0.1, 0.2, -0.1, 0.05];
        for g in 0..4 {
            head.gates[g].w[[0, 0]] = wx[g];
            head.gates[g].w[[0, 1]] = 0.7;
            head.gates[g].b[0] = bs[g];
        }
        head.w_out[0] = 1.5;
        head.b_out = -0.2;
        let x = 0.9_f64;
        let i = sigmoid(0.5 * x + 0.1);
        let o = sigmoid(0.8 * x - 0.1);
        let g = (1.2 * x + 0.05).tanh();
        let c = i * g;
        let h = o * c.tanh();
        let want = sigmoid(1.5 * h - 0.2);
        let got = head.forward(array![[x]].view())[0];
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let head = DynamicHead::zeros("v", 2, 2);
        assert!(matches!(
            head.loss_and_grads(array![[1.0, 2.0]].view(), &[1, 0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn confident_predictions_have_vanishing_loss() {
        let mut head = DynamicHead::zeros("v", 1, 1);
        head.b_out = 40.0;
        let g = head.loss_and_grads(array![[0.3], [0.1]].view(), &[1, 1]).unwrap();
        assert!(g.loss < 1e-12);
    }
}
