//! Smooth dynamic weighting of task losses.
//!
//! Each epoch, a task's descent rate is `Loss(t−1) / Loss(t−2)`. Weights
//! are `N · softmax(a)`, where `a_n` is the mean of task `n`'s last
//! `min(m, t−2)` rates divided by the temperature `C`. Slower improving
//! tasks get more weight. The reconstruction loss counts as one task.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdwConfig {
    pub enabled: bool,
    /// Temperature; `None` means `1/√N`.
    #[serde(rename = "C")]
    pub c: Option<f64>,
    /// Window length in epochs.
    pub m: usize,
}

impl Default for SdwConfig {
    fn default() -> Self {
        Self { enabled: true, c: None, m: 5 }
    }
}

impl SdwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("SDW window m must be at least 1"));
        }
        if let Some(c) = self.c {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config(format!("SDW temperature C must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdwState {
    n_tasks: usize,
    c: f64,
    m: usize,
    /// `history[n][t-1]` is `Loss_n(t)` for 1-based epoch `t`.
    history: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl SdwState {
    pub fn new(n_tasks: usize, c: f64, m: usize) -> Result<Self> {
        if n_tasks == 0 {
            return Err(Error::config("SDW needs at least one task"));
        }
        SdwConfig { enabled: true, c: Some(c), m }.validate()?;
        Ok(Self {
            n_tasks,
            c,
            m,
            history: vec![Vec::new(); n_tasks],
            weights: vec![1.0; n_tasks],
        })
    }

    pub fn from_config(n_tasks: usize, cfg: &SdwConfig) -> Result<Self> {
        let c = cfg.c.unwrap_or_else(|| 1.0 / (n_tasks.max(1) as f64).sqrt());
        Self::new(n_tasks, c, cfg.m)
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn temperature(&self) -> f64 {
        self.c
    }

    pub fn window(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of epochs recorded so far.
    pub fn epochs_recorded(&self) -> usize {
        self.history[0].len()
    }

    pub fn history(&self, n: usize) -> &[f64] {
        &self.history[n]
    }

    /// Appends one epoch of per-task losses.
    pub fn record(&mut self, losses: &[f64]) -> Result<()> {
        if losses.len() != self.n_tasks {
            return Err(Error::config(format!(
                "{} losses for {} tasks",
                losses.len(),
                self.n_tasks
            )));
        }
        for (h, &l) in self.history.iter_mut().zip(losses) {
            h.push(l);
        }
        Ok(())
    }

    /// `ω_n(t−1) = Loss_n(t−1) / Loss_n(t−2)`, epochs 1-based.
    pub fn descent_rate(&self, n: usize, t: usize) -> Result<f64> {
        let h = self
            .history
            .get(n)
            .ok_or_else(|| Error::config(format!("task index {n} out of range")))?;
        if t < 3 || h.len() < t - 1 {
            return Err(Error::InsufficientHistory);
        }
        let (prev, last) = (h[t - 3], h[t - 2]);
        if prev == 0.0 {
            return Err(Error::degenerate(format!("task {n} had zero loss at epoch {}", t - 2)));
        }
        Ok(last / prev)
    }

    /// Weights for epoch `t` from losses up to `t−1`. Returns all ones
    /// while fewer than two epochs are recorded.
    pub fn update_weights(&mut self, t: usize) -> Result<Vec<f64>> {
        if t < 3 || self.epochs_recorded() < t - 1 {
            self.weights = vec![1.0; self.n_tasks];
            return Ok(self.weights.clone());
        }
        let w = self.m.min(t - 2);
        let mut logits = Vec::with_capacity(self.n_tasks);
        for n in 0..self.n_tasks {
            let mut acc = 0.0;
            // Rates ω(j−1) for j = t−w+1 ..= t, i.e. the last w rates.
            for j in (t - w + 1)..=t {
                acc += self.descent_rate(n, j)? / self.c;
            }
            logits.push(acc / w as f64);
        }
        self.weights = scaled_softmax(&logits);
        Ok(self.weights.clone())
    }
}

/// `N · softmax(a)`
pub fn scaled_softmax(a: &[f64]) -> Vec<f64> {
    let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    let n = a.len() as f64;
    e.iter().map(|x| n * x / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(histories: &[&[f64]], c: f64, m: usize) -> SdwState {
        let mut st = SdwState::new(histories.len(), c, m).unwrap();
        for t in 0..histories[0].len() {
            let row: Vec<f64> = histories.iter().map(|h| h[t]).collect();
            st.record(&row).unwrap();
        }
        st
    }

    #[test]
    fn descent_rate_cases() {
        let st = state_with(&[&[1.0, 1.0], &[1.0, 0.5], &[0.0, 1.0]], 1.0, 1);
        assert_eq!(st.descent_rate(0, 3).unwrap(), 1.0);
        assert_eq!(st.descent_rate(1, 3).unwrap(), 0.5);
        assert!(matches!(st.descent_rate(2, 3), Err(Error::Degenerate(_))));
        assert!(matches!(st.descent_rate(0, 2), Err(Error::InsufficientHistory)));
        assert!(matches!(st.descent_rate(0, 4), Err(Error::InsufficientHistory)));
    }

    #[test]
    fn two_task_hand_case() {
        let mut st = state_with(&[&[1.0, 1.0], &[1.0, 0.5]], 1.0, 1);
        let w = st.update_weights(3).unwrap();
        let e = 1f64.exp() + 0.5f64.exp();
        assert!((w[0] - 2.0 * 1f64.exp() / e).abs() < 1e-12);
        assert!((w[0] - 1.2449).abs() < 1e-3);
        assert!((w[1] - 0.7551).abs() < 1e-3);
    }

    #[test]
    fn early_epochs_are_uniform() {
        let mut st = state_with(&[&[3.0], &[1.0]], 0.5, 5);
        assert_eq!(st.update_weights(1).unwrap(), vec![1.0, 1.0]);
        assert_eq!(st.update_weights(2).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn window_uses_available_rates() {
        // t = 4, m = 5 → w = 2 rates: 0.5 and 0.5 for task 0, 1 and 1 for task 1.
        let mut st = state_with(&[&[4.0, 2.0, 1.0], &[1.0, 1.0, 1.0]], 1.0, 5);
        let w = st.update_weights(4).unwrap();
        let expect = scaled_softmax(&[0.5, 1.0]);
        assert!((w[0] - expect[0]).abs() < 1e-15);
    }

    #[test]
    fn default_temperature() {
        let st = SdwState::from_config(4, &SdwConfig::default()).unwrap();
        assert_eq!(st.temperature(), 0.5);
        assert_eq!(st.window(), 5);
    }
}
