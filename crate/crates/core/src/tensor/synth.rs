//! Seeded synthetic PARAFAC2 data with known factors and labels drawn
//! from them.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{IrregularTensor, LabelTable};
use crate::error::{Error, Result};
use crate::heads::sigmoid;
use crate::linalg::{gaussian, orthonormalize_columns, scale_columns};
use crate::model::FactorModel;

const STATIC_NAMES: [&str; 2] = ["mortality", "readmission"];
const DYNAMIC_NAMES: [&str; 1] = ["ventilation"];

/// Standard deviation of the static label weights, before division by `√R`.
const STATIC_SCALE: f64 = 8.7;
/// Target standard deviation of the dynamic label logits.
const DYNAMIC_SCALE: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub k: usize,
    pub j: usize,
    pub r_true: usize,
    pub i_min: usize,
    pub i_max: usize,
    pub noise_sd: f64,
    pub missing_rate: f64,
    pub label_noise: f64,
    pub seed: u64,
    #[serde(default = "default_static")]
    pub n_static: usize,
    #[serde(default = "default_dynamic")]
    pub n_dynamic: usize,
}

fn default_static() -> usize {
    2
}

fn default_dynamic() -> usize {
    1
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            k: 50,
            j: 20,
            r_true: 5,
            i_min: 5,
            i_max: 15,
            noise_sd: 0.0,
            missing_rate: 0.0,
            label_noise: 0.0,
            seed: 0,
            n_static: default_static(),
            n_dynamic: default_dynamic(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.j == 0 || self.r_true == 0 {
            return Err(Error::config("K, J and R_true must be positive"));
        }
        if self.i_min == 0 || self.i_min > self.i_max {
            return Err(Error::config(format!(
                "visit range [{}, {}] is empty or starts at zero",
                self.i_min, self.i_max
            )));
        }
        if self.r_true > self.i_min.min(self.j) {
            return Err(Error::config(format!(
                "R_true = {} exceeds min(I_min, J) = {}",
                self.r_true,
                self.i_min.min(self.j)
            )));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::config("noise_sd must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config(format!("missing_rate {} outside [0, 1)", self.missing_rate)));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::config(format!("label_noise {} outside [0, 0.5)", self.label_noise)));
        }
        Ok(())
    }

    pub fn static_task_names(&self) -> Vec<String> {
        task_names(&STATIC_NAMES, "static", self.n_static)
    }

    pub fn dynamic_task_names(&self) -> Vec<String> {
        task_names(&DYNAMIC_NAMES, "dynamic", self.n_dynamic)
    }
}

fn task_names(base: &[&str], prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match base.get(i) {
            Some(name) => name.to_string(),
            None => format!("{prefix}_{i}"),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub tensor: IrregularTensor,
    pub labels: LabelTable,
    /// Ground truth with `U_k = Q_k H`.
    pub truth: FactorModel,
}

fn flip<R: Rng>(rng: &mut R, y: u8, rate: f64) -> u8 {
    if rng.random::<f64>() < rate {
        1 - y
    } else {
        y
    }
}

/// Draws `Q_k` orthonormal, `H = I + 0.3·N(0,1)`, `V ~ N(0,1)`,
/// `s_k ~ U(0.5, 1.5)`, then `X_k = Q_k H diag(s_k) Vᵀ + noise` with a
/// Bernoulli(`missing_rate`) missingness pattern.
pub fn synth_generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let r = spec.r_true;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut label_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    label_rng.set_stream(1);

    let h = Array2::eye(r) + gaussian(&mut rng, r, r, 0.3);
    let v = gaussian(&mut rng, spec.j, r, 1.0);
    let mut q = Vec::with_capacity(spec.k);
    let mut s = Vec::with_capacity(spec.k);
    let mut slices = Vec::with_capacity(spec.k);
    let mut masks = Vec::with_capacity(spec.k);
    for _ in 0..spec.k {
        let i = rng.random_range(spec.i_min..=spec.i_max);
        let qk = orthonormalize_columns(&gaussian(&mut rng, i, r, 1.0));
        let sk: Array1<f64> = (0..r).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut x = scale_columns(qk.dot(&h).view(), &sk).dot(&v.t());
        if spec.noise_sd > 0.0 {
            x += &gaussian(&mut rng, i, spec.j, spec.noise_sd);
        }
        let mask = if spec.missing_rate > 0.0 {
            Array2::from_shape_fn((i, spec.j), |_| rng.random::<f64>() >= spec.missing_rate)
        } else {
            Array2::from_elem((i, spec.j), true)
        };
        q.push(qk);
        s.push(sk);
        slices.push(x);
        masks.push(mask);
    }
    let feature_names = (0..spec.j).map(|j| format!("f{j}")).collect();
    let width = spec.k.saturating_sub(1).to_string().len();
    let slice_ids: Vec<String> = (0..spec.k).map(|k| format!("s{k:0width$}")).collect();
    let truth = FactorModel::new(q, h, s, v)?;
    let tensor = IrregularTensor::new(slices, masks, feature_names, slice_ids.clone())?;

    let mut labels = LabelTable::default();
    let rf = r as f64;
    for task in spec.static_task_names() {
        let w = gaussian(&mut label_rng, r, 1, STATIC_SCALE / rf.sqrt()).column(0).to_owned();
        // Memberships are centred at 1, so this centres the logits at 0.
        let b = -w.sum();
        let by_id: BTreeMap<String, u8> = slice_ids
            .iter()
            .zip(&truth.s)
            .map(|(id, sk)| {
                let p = sigmoid(w.dot(sk) + b);
                let y = u8::from(label_rng.random::<f64>() < p);
                (id.clone(), flip(&mut label_rng, y, spec.label_noise))
            })
            .collect();
        labels.static_labels.insert(task, by_id);
    }
    let mean_rows = (spec.i_min + spec.i_max) as f64 / 2.0;
    for task in spec.dynamic_task_names() {
        // Rows of Q_k H have squared norm around R / I_k.
        let sd = DYNAMIC_SCALE * (mean_rows / rf).sqrt();
        let w = gaussian(&mut label_rng, r, 1, sd).column(0).to_owned();
        let by_id: BTreeMap<String, Vec<u8>> = slice_ids
            .iter()
            .zip(&truth.u)
            .map(|(id, uk)| {
                let seq = uk
                    .outer_iter()
                    .map(|row| {
                        let y = u8::from(label_rng.random::<f64>() < sigmoid(w.dot(&row)));
                        flip(&mut label_rng, y, spec.label_noise)
                    })
                    .collect();
                (id.clone(), seq)
            })
            .collect();
        labels.dynamic_labels.insert(task, by_id);
    }
    labels.validate(&tensor)?;
    Ok(Synthetic { tensor, labels, truth })
}
