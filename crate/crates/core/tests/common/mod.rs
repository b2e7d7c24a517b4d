#![allow(dead_code)]

use ndarray::{Array1, Array2};
use parafac2_mtl::heads::{BoundLabels, DynamicHead, StaticHead, TaskSet};
use parafac2_mtl::model::{FactorModel, Objective, PenaltyConfig, Supervision, TaskWeights};
use parafac2_mtl::tensor::IrregularTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| sd * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| sd * rng.sample::<f64, _>(StandardNormal))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn relative_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.max(nb).sqrt();
    if scale < 1e-8 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_diff<F>(x: &mut [f64], mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = f(x);
        x[i] = orig - FD_STEP;
        let down = f(x);
        x[i] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

/// A small random problem: tensor, model, heads and labels.
pub struct Instance {
    pub tensor: IrregularTensor,
    pub model: FactorModel,
    pub heads: TaskSet,
    pub labels: BoundLabels,
    pub penalties: PenaltyConfig,
    pub weights: TaskWeights,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=3);
        let j = rng.random_range(1..=5);
        let r = rng.random_range(1..=5);
        let hidden = rng.random_range(1..=3);
        let mut slices = Vec::new();
        let mut masks = Vec::new();
        let mut q = Vec::new();
        let mut s = Vec::new();
        for _ in 0..k {
            let i = rng.random_range(1..=5);
            slices.push(normal(&mut rng, i, j, 1.0));
            let mut m = Array2::from_shape_fn((i, j), |_| rng.random::<f64>() < 0.7);
            m[[0, 0]] = true;
            masks.push(m);
            q.push(normal(&mut rng, i, r, 0.7));
            s.push(Array1::from_shape_fn(r, |_| rng.random_range(0.1..1.5)));
        }
        let h = normal(&mut rng, r, r, 0.7);
        let v = normal(&mut rng, j, r, 0.7);
        let mut model = FactorModel::new(q, h, s, v).unwrap();
        for uk in model.u.iter_mut() {
            *uk += &normal(&mut rng, uk.nrows(), r, 0.3);
        }
        let ids = (0..k).map(|i| format!("k{i}")).collect();
        let features = (0..j).map(|i| format!("f{i}")).collect();
        let tensor = IrregularTensor::new(slices, masks, features, ids).unwrap();

        let mut sh = StaticHead::zeros("st", r);
        sh.w = normal_vec(&mut rng, r, 1.0);
        sh.b = rng.random_range(-0.5..0.5);
        let mut dh = DynamicHead::random("dy", r, hidden, 0.6, &mut rng);
        for g in dh.gates.iter_mut() {
            g.b = normal_vec(&mut rng, hidden, 0.3);
        }
        dh.w_out = normal_vec(&mut rng, hidden, 1.0);
        dh.b_out = rng.random_range(-0.5..0.5);
        let heads = TaskSet {
            statics: vec![sh],
            dynamics: vec![dh],
        };
        let labels = BoundLabels {
            statics: vec![(0..k).map(|_| Some(rng.random_range(0..2u8))).collect()],
            dynamics: vec![(0..k)
                .map(|i| Some((0..tensor.n_rows(i)).map(|_| rng.random_range(0..2u8)).collect()))
                .collect()],
        };
        let penalties = PenaltyConfig {
            varrho1: rng.random_range(0.01..1.0),
            varrho2: rng.random_range(0.01..1.0),
            ..Default::default()
        };
        let weights = TaskWeights {
            tensor: rng.random_range(0.2..2.0),
            statics: vec![rng.random_range(0.2..2.0)],
            dynamics: vec![rng.random_range(0.2..2.0)],
        };
        Self {
            tensor,
            model,
            heads,
            labels,
            penalties,
            weights,
        }
    }

    pub fn objective(&self) -> Objective<'_> {
        Objective::full(
            &self.tensor,
            &self.penalties,
            &self.weights,
            Some(Supervision {
                heads: &self.heads,
                labels: &self.labels,
            }),
        )
        .unwrap()
    }

    fn all(&self) -> Vec<usize> {
        (0..self.model.n_slices()).collect()
    }

    fn value_with(&self, m: &FactorModel) -> f64 {
        self.objective().value(&self.tensor, m, &self.all()).unwrap()
    }

    /// Relative errors of every analytic gradient against central
    /// differences, labelled by block.
    pub fn check_all(&self) -> Vec<(&'static str, f64)> {
        let obj = self.objective();
        let mut out = Vec::new();
        let k = 0;

        let g = obj.grad_u(&self.tensor, &self.model, k).unwrap();
        let mut m = self.model.clone();
        let mut x = m.u[k].iter().copied().collect::<Vec<_>>();
        let shape = m.u[k].dim();
        let fd = central_diff(&mut x, |x| {
            m.u[k] = Array2::from_shape_vec(shape, x.to_vec()).unwrap();
            self.value_with(&m)
        });
        out.push(("grad_U", relative_error(g.iter(), fd.iter())));

        let g = obj.grad_q(&self.model, k).unwrap();
        let mut m = self.model.clone();
        let mut x = m.q[k].iter().copied().collect::<Vec<_>>();
        let shape = m.q[k].dim();
        let fd = central_diff(&mut x, |x| {
            m.q[k] = Array2::from_shape_vec(shape, x.to_vec()).unwrap();
            self.value_with(&m)
        });
        out.push(("grad_Q", relative_error(g.iter(), fd.iter())));

        let g = obj.grad_h(&self.model, &self.all()).unwrap();
        let mut m = self.model.clone();
        let mut x = m.h.iter().copied().collect::<Vec<_>>();
        let shape = m.h.dim();
        let fd = central_diff(&mut x, |x| {
            m.h = Array2::from_shape_vec(shape, x.to_vec()).unwrap();
            (0..m.n_slices())
                .map(|i| {
                    let d = &m.u[i] - &m.q[i].dot(&m.h);
                    d.iter().map(|v| v * v).sum::<f64>()
                })
                .sum()
        });
        out.push(("grad_H", relative_error(g.iter(), fd.iter())));

        let g = obj.grad_s(&self.tensor, &self.model, k).unwrap();
        let mut m = self.model.clone();
        let mut x = m.s[k].to_vec();
        let fd = central_diff(&mut x, |x| {
            m.s[k] = Array1::from(x.to_vec());
            self.value_with(&m)
        });
        out.push(("grad_S", relative_error(g.iter(), fd.iter())));

        let g = obj.grad_v(&self.tensor, &self.model, &self.all()).unwrap();
        let mut m = self.model.clone();
        let mut x = m.v.iter().copied().collect::<Vec<_>>();
        let shape = m.v.dim();
        let fd = central_diff(&mut x, |x| {
            m.v = Array2::from_shape_vec(shape, x.to_vec()).unwrap();
            self.value_with(&m)
        });
        out.push(("grad_V", relative_error(g.iter(), fd.iter())));

        out.extend(self.check_static_head());
        out.extend(self.check_dynamic_head());
        out
    }

    fn check_static_head(&self) -> Vec<(&'static str, f64)> {
        let head = &self.heads.statics[0];
        let s = &self.model.s[0];
        let y = self.labels.statics[0][0].unwrap();
        let g = head.loss_and_grads(s.view(), y);
        let mut out = Vec::new();

        let mut x: Vec<f64> = head.w.iter().copied().chain([head.b]).collect();
        let r = head.w.len();
        let fd = central_diff(&mut x, |x| {
            let mut h = head.clone();
            h.w = Array1::from(x[..r].to_vec());
            h.b = x[r];
            h.loss_and_grads(s.view(), y).loss
        });
        let analytic: Vec<f64> = g.w.iter().copied().chain([g.b]).collect();
        out.push(("static_head_params", relative_error(analytic.iter(), fd.iter())));

        let mut x = s.to_vec();
        let fd = central_diff(&mut x, |x| head.loss_and_grads(Array1::from(x.to_vec()).view(), y).loss);
        out.push(("static_head_input", relative_error(g.s.iter(), fd.iter())));
        out
    }

    fn check_dynamic_head(&self) -> Vec<(&'static str, f64)> {
        let head = &self.heads.dynamics[0];
        let u = &self.model.u[0];
        let y = self.labels.dynamics[0][0].clone().unwrap();
        let g = head.loss_and_grads(u.view(), &y).unwrap();
        let mut out = Vec::new();

        let flatten = |h: &DynamicHead| -> Vec<f64> {
            let mut v = Vec::new();
            for gate in &h.gates {
                v.extend(gate.w.iter().copied());
                v.extend(gate.b.iter().copied());
            }
            v.extend(h.w_out.iter().copied());
            v.push(h.b_out);
            v
        };
        let unflatten = |x: &[f64]| -> DynamicHead {
            let mut h = head.clone();
            let mut i = 0;
            for gate in h.gates.iter_mut() {
                for w in gate.w.iter_mut() {
                    *w = x[i];
                    i += 1;
                }
                for b in gate.b.iter_mut() {
                    *b = x[i];
                    i += 1;
                }
            }
            for w in h.w_out.iter_mut() {
                *w = x[i];
                i += 1;
            }
            h.b_out = x[i];
            h
        };
        let mut analytic_head = head.clone();
        analytic_head.gates = g.gates.clone();
        analytic_head.w_out = g.w_out.clone();
        analytic_head.b_out = g.b_out;
        let analytic = flatten(&analytic_head);
        let mut x = flatten(head);
        let fd = central_diff(&mut x, |x| unflatten(x).loss_and_grads(u.view(), &y).unwrap().loss);
        out.push(("dynamic_head_params", relative_error(analytic.iter(), fd.iter())));

        let mut x: Vec<f64> = u.iter().copied().collect();
        let shape = u.dim();
        let fd = central_diff(&mut x, |x| {
            let uu = Array2::from_shape_vec(shape, x.to_vec()).unwrap();
            head.loss_and_grads(uu.view(), &y).unwrap().loss
        });
        out.push(("dynamic_head_input", relative_error(g.input.iter(), fd.iter())));
        out
    }
}
