use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::state::TrainerState;
use crate::error::{Error, Result};
use crate::tensor::{synth_generate, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingAxis {
    K,
    J,
    R,
}

impl ScalingAxis {
    pub fn name(self) -> &'static str {
        match self {
            ScalingAxis::K => "K",
            ScalingAxis::J => "J",
            ScalingAxis::R => "R",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub axis: ScalingAxis,
    pub value: usize,
    pub k: usize,
    pub j: usize,
    pub rank: usize,
    pub ms_per_epoch: f64,
}

/// Ordinary least squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::config("linear fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::degenerate("all x values are equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// One fit of time per epoch against the varied size, per axis.
    pub fits: Vec<(ScalingAxis, LinearFit)>,
}

impl ScalingReport {
    pub fn fit_for(&self, axis: ScalingAxis) -> Option<LinearFit> {
        self.fits.iter().find(|(a, _)| *a == axis).map(|(_, f)| *f)
    }

    pub fn points_for(&self, axis: ScalingAxis) -> Vec<&ScalingPoint> {
        self.points.iter().filter(|p| p.axis == axis).collect()
    }
}

/// Times unsupervised epochs on synthetic data while one size varies along
/// each ladder. Each point keeps the fastest of `repeats` runs of `epochs`
/// epochs; repeats cycle through all points so a transient slowdown does
/// not land on a single one.
pub fn scaling_probe(
    base: &SynthSpec,
    cfg: &TrainConfig,
    ladders: &[(ScalingAxis, Vec<usize>)],
    epochs: usize,
    repeats: usize,
) -> Result<ScalingReport> {
    if epochs == 0 || repeats == 0 {
        return Err(Error::config("scaling probe needs at least one epoch and one repeat"));
    }
    let mut cases = Vec::new();
    for (axis, values) in ladders {
        for &value in values {
            let mut spec = base.clone();
            let mut run = cfg.clone();
            run.mode = Mode::Unsupervised;
            run.tol = 0.0;
            match axis {
                ScalingAxis::K => spec.k = value,
                ScalingAxis::J => spec.j = value,
                ScalingAxis::R => {
                    run.rank = value;
                    spec.r_true = spec.r_true.min(value);
                }
            }
            let data = synth_generate(&spec)?;
            cases.push((*axis, value, spec, run, data));
        }
    }
    let mut best = vec![f64::INFINITY; cases.len()];
    for _ in 0..repeats {
        for ((_, _, _, run, data), best) in cases.iter().zip(best.iter_mut()) {
            let mut st = TrainerState::new(&data.tensor, None, run)?;
            let started = Instant::now();
            for _ in 0..epochs {
                st.epoch_step(&data.tensor, run)?;
            }
            *best = best.min(started.elapsed().as_secs_f64() * 1e3 / epochs as f64);
        }
    }
    let points: Vec<ScalingPoint> = cases
        .iter()
        .zip(&best)
        .map(|((axis, value, spec, run, _), &ms)| ScalingPoint {
            axis: *axis,
            value: *value,
            k: spec.k,
            j: spec.j,
            rank: run.rank,
            ms_per_epoch: ms,
        })
        .collect();
    let mut fits = Vec::new();
    for (axis, _) in ladders {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|p| p.axis == *axis)
            .map(|p| (p.value as f64, p.ms_per_epoch))
            .unzip();
        if xs.len() >= 2 {
            fits.push((*axis, linear_fit(&xs, &ys)?));
        }
    }
    Ok(ScalingReport { points, fits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_unit_r_squared() {
        let f = linear_fit(&[1.0, 2.0, 4.0, 8.0], &[3.0, 5.0, 9.0, 17.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }
}
