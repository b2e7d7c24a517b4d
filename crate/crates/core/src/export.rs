//! Interpretability tables: top features per phenotype with subgroup
//! averages, and subgroup mean trajectories for one feature.

use std::io::Write;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::tensor::IrregularTensor;
use crate::trainer::project_slices;

/// Dominant phenotype of every slice of `t`. Slices named in `model_ids`
/// use their trained memberships; the others are projected onto the frozen
/// model first.
pub fn subgroups(
    model: &FactorModel,
    model_ids: &[String],
    t: &IrregularTensor,
    projection_iters: usize,
) -> Result<Vec<usize>> {
    if model_ids.len() != model.n_slices() {
        return Err(Error::config(format!(
            "{} slice ids for a model with {} slices",
            model_ids.len(),
            model.n_slices()
        )));
    }
    let known: Vec<Option<usize>> = t
        .slice_ids()
        .iter()
        .map(|id| model_ids.iter().position(|m| m == id))
        .collect();
    let unknown: Vec<usize> = (0..known.len()).filter(|&k| known[k].is_none()).collect();
    let projected = if unknown.is_empty() {
        None
    } else {
        Some(project_slices(model, &t.subset(&unknown)?, projection_iters)?)
    };
    let mut next = 0;
    Ok(known
        .iter()
        .map(|pos| match (pos, &projected) {
            (Some(k), _) => model.dominant_phenotype(*k),
            (None, Some(p)) => {
                next += 1;
                p.dominant_phenotype(next - 1)
            }
            (None, None) => unreachable!("unknown slices are projected"),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhenotypeRow {
    /// 1-based phenotype index.
    pub phenotype: usize,
    /// 1-based position within the phenotype's feature ranking.
    pub position: usize,
    pub feature: String,
    pub weight: f64,
    pub subgroup_size: usize,
    /// Mean observed value over the subgroup; empty when nothing is observed.
    pub average: Option<f64>,
}

/// Top `top_n` features of each column of `V` by absolute weight. `groups`
/// holds the dominant phenotype of each slice of `t`.
pub fn phenotype_table(
    v: &ndarray::Array2<f64>,
    t: &IrregularTensor,
    groups: &[usize],
    top_n: usize,
) -> Result<Vec<PhenotypeRow>> {
    if top_n == 0 {
        return Err(Error::config("top_n must be at least 1"));
    }
    if v.nrows() != t.n_features() {
        return Err(Error::config(format!(
            "V has {} rows but the tensor has {} features",
            v.nrows(),
            t.n_features()
        )));
    }
    let j = v.nrows();
    let top = if top_n > j {
        warn!("top_n {top_n} exceeds the feature count {j}; using {j}");
        j
    } else {
        top_n
    };
    let mut rows = Vec::new();
    for r in 0..v.ncols() {
        let members: Vec<usize> = (0..groups.len()).filter(|&k| groups[k] == r).collect();
        let mut order: Vec<usize> = (0..j).collect();
        order.sort_by(|&a, &b| v[[b, r]].abs().total_cmp(&v[[a, r]].abs()));
        for (pos, &f) in order.iter().take(top).enumerate() {
            rows.push(PhenotypeRow {
                phenotype: r + 1,
                position: pos + 1,
                feature: t.feature_names()[f].clone(),
                weight: v[[f, r]],
                subgroup_size: members.len(),
                average: observed_mean(t, &members, f, None),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub phenotype: usize,
    pub n_slices: usize,
    /// 1-based timestep.
    pub timestep: usize,
    pub mean: Option<f64>,
}

/// Per-subgroup mean of `feature` at each timestep over the slices with
/// exactly `length` rows.
pub fn trajectories(t: &IrregularTensor, groups: &[usize], feature: &str, length: usize) -> Result<Vec<TrajectoryRow>> {
    let f = t
        .feature_index(feature)
        .ok_or_else(|| Error::config(format!("unknown feature '{feature}'")))?;
    let selected: Vec<usize> = (0..t.n_slices()).filter(|&k| t.n_rows(k) == length).collect();
    if selected.is_empty() {
        return Err(Error::config(format!("no slice has exactly {length} rows")));
    }
    let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
    let mut rows = Vec::new();
    for g in 0..n_groups {
        let members: Vec<usize> = selected.iter().copied().filter(|&k| groups[k] == g).collect();
        if members.is_empty() {
            continue;
        }
        for i in 0..length {
            rows.push(TrajectoryRow {
                phenotype: g + 1,
                n_slices: members.len(),
                timestep: i + 1,
                mean: observed_mean(t, &members, f, Some(i)),
            });
        }
    }
    Ok(rows)
}

fn observed_mean(t: &IrregularTensor, slices: &[usize], f: usize, row: Option<usize>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for &k in slices {
        let (x, m) = (t.slice(k), t.mask(k));
        let range = match row {
            Some(i) => i..i + 1,
            None => 0..x.nrows(),
        };
        for i in range {
            if m[[i, f]] {
                sum += x[[i, f]];
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}
