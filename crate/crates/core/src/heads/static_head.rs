use ndarray::{Array1, ArrayView1};

use super::{clamp_probability, sigmoid};

/// Logistic regression on a slice's phenotype memberships `s_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticHead {
    pub task: String,
    pub w: Array1<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticGrads {
    pub loss: f64,
    pub w: Array1<f64>,
    pub b: f64,
    /// Gradient with respect to the input memberships.
    pub s: Array1<f64>,
}

impl StaticHead {
    pub fn zeros(task: impl Into<String>, rank: usize) -> Self {
        Self {
            task: task.into(),
            w: Array1::zeros(rank),
            b: 0.0,
        }
    }

    pub fn forward(&self, s: ArrayView1<f64>) -> f64 {
        sigmoid(self.w.dot(&s) + self.b)
    }

    /// Cross-entropy with the probability clamped to `[1e-12, 1 - 1e-12]`.
    pub fn loss_and_grads(&self, s: ArrayView1<f64>, y: u8) -> StaticGrads {
        let p = self.forward(s);
        let y = y as f64;
        let pc = clamp_probability(p);
        let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        let d = p - y;
        StaticGrads {
            loss,
            w: s.mapv(|v| d * v),
            b: d,
            s: self.w.mapv(|v| d * v),
        }
    }

    pub fn apply(&mut self, grads: &StaticGrads, lr: f64) {
        self.w.scaled_add(-lr, &grads.w);
        self.b -= lr * grads.b;
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|x| x.is_finite())
    }
}
