//! Irregular tensors: K dense slices sharing a feature mode, each with its
//! own observation mask, plus the static/dynamic label table that rides
//! alongside them.

mod io;
mod split;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::Array2;

use crate::error::{Error, Result};

pub use io::{
    load_labels, load_tensor, read_labels_csv, read_tensor_jsonl, save_labels, save_tensor,
    write_labels_csv, write_tensor_jsonl,
};
pub use split::{split_tensor, Partition};
pub use synth::{synth_generate, SynthSpec, Synthetic};

/// K slices of shape `I_k × J` with per-entry observation masks.
///
/// Unobserved entries are stored as zero and are never read by any loss.
#[derive(Debug, Clone, PartialEq)]
pub struct IrregularTensor {
    slices: Vec<Array2<f64>>,
    masks: Vec<Array2<bool>>,
    feature_names: Vec<String>,
    slice_ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IrregularTensor {
    pub fn new(
        mut slices: Vec<Array2<f64>>,
        masks: Vec<Array2<bool>>,
        feature_names: Vec<String>,
        slice_ids: Vec<String>,
    ) -> Result<Self> {
        let j = feature_names.len();
        if j == 0 {
            return Err(Error::config("tensor needs at least one feature"));
        }
        if slices.is_empty() {
            return Err(Error::config("tensor has no slices"));
        }
        if slices.len() != slice_ids.len() || slices.len() != masks.len() {
            return Err(Error::config(format!(
                "{} slices, {} masks and {} ids do not line up",
                slices.len(),
                masks.len(),
                slice_ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(slice_ids.len());
        for (k, id) in slice_ids.iter().enumerate() {
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for ((x, m), id) in slices.iter_mut().zip(&masks).zip(&slice_ids) {
            if x.nrows() == 0 {
                return Err(Error::shape(id, "slice has no rows"));
            }
            if x.ncols() != j {
                return Err(Error::shape(
                    id,
                    format!("{} columns, expected {}", x.ncols(), j),
                ));
            }
            if m.dim() != x.dim() {
                return Err(Error::shape(
                    id,
                    format!("mask shape {:?} differs from slice shape {:?}", m.dim(), x.dim()),
                ));
            }
            for (v, &obs) in x.iter_mut().zip(m.iter()) {
                if !obs {
                    *v = 0.0;
                } else if !v.is_finite() {
                    return Err(Error::shape(id, "non-finite observed value"));
                }
            }
        }
        Ok(Self {
            slices,
            masks,
            feature_names,
            slice_ids,
            index,
        })
    }

    /// Builds a tensor whose entries are all observed.
    pub fn fully_observed(
        slices: Vec<Array2<f64>>,
        feature_names: Vec<String>,
        slice_ids: Vec<String>,
    ) -> Result<Self> {
        let masks = slices
            .iter()
            .map(|x| Array2::from_elem(x.dim(), true))
            .collect();
        Self::new(slices, masks, feature_names, slice_ids)
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_rows(&self, k: usize) -> usize {
        self.slices[k].nrows()
    }

    pub fn row_counts(&self) -> Vec<usize> {
        self.slices.iter().map(|x| x.nrows()).collect()
    }

    pub fn slice(&self, k: usize) -> &Array2<f64> {
        &self.slices[k]
    }

    pub fn mask(&self, k: usize) -> &Array2<bool> {
        &self.masks[k]
    }

    pub fn slices(&self) -> &[Array2<f64>] {
        &self.slices
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn slice_ids(&self) -> &[String] {
        &self.slice_ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// `|Ω_k|`
    pub fn observed_in(&self, k: usize) -> usize {
        self.masks[k].iter().filter(|&&m| m).count()
    }

    /// `|Ω|`
    pub fn observed_count(&self) -> usize {
        (0..self.n_slices()).map(|k| self.observed_in(k)).sum()
    }

    /// Squared Frobenius norm over observed entries.
    pub fn observed_sq_norm(&self) -> f64 {
        self.slices
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// The tensor restricted to the given slice positions, in that order.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        Self::new(
            positions.iter().map(|&k| self.slices[k].clone()).collect(),
            positions.iter().map(|&k| self.masks[k].clone()).collect(),
            self.feature_names.clone(),
            positions.iter().map(|&k| self.slice_ids[k].clone()).collect(),
        )
    }
}

/// Binary outcomes keyed by task name, then slice id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    pub static_labels: BTreeMap<String, BTreeMap<String, u8>>,
    pub dynamic_labels: BTreeMap<String, BTreeMap<String, Vec<u8>>>,
}

impl LabelTable {
    pub fn is_empty(&self) -> bool {
        self.static_labels.is_empty() && self.dynamic_labels.is_empty()
    }

    pub fn static_tasks(&self) -> Vec<String> {
        self.static_labels.keys().cloned().collect()
    }

    pub fn dynamic_tasks(&self) -> Vec<String> {
        self.dynamic_labels.keys().cloned().collect()
    }

    pub fn has_task(&self, task: &str) -> bool {
        self.static_labels.contains_key(task) || self.dynamic_labels.contains_key(task)
    }

    /// Checks the table against its companion tensor.
    pub fn validate(&self, tensor: &IrregularTensor) -> Result<()> {
        for task in self.static_labels.keys() {
            if self.dynamic_labels.contains_key(task) {
                return Err(Error::Label(format!(
                    "task '{task}' is declared both static and dynamic"
                )));
            }
        }
        for (task, by_slice) in &self.static_labels {
            for (id, &y) in by_slice {
                if tensor.index_of(id).is_none() {
                    return Err(Error::Label(format!("task '{task}': unknown slice '{id}'")));
                }
                if y > 1 {
                    return Err(Error::Label(format!("task '{task}': label {y} is not binary")));
                }
            }
        }
        for (task, by_slice) in &self.dynamic_labels {
            for (id, seq) in by_slice {
                let k = tensor
                    .index_of(id)
                    .ok_or_else(|| Error::Label(format!("task '{task}': unknown slice '{id}'")))?;
                if seq.len() != tensor.n_rows(k) {
                    return Err(Error::Label(format!(
                        "task '{task}', slice '{id}': {} labels for {} timesteps",
                        seq.len(),
                        tensor.n_rows(k)
                    )));
                }
                if seq.iter().any(|&y| y > 1) {
                    return Err(Error::Label(format!(
                        "task '{task}', slice '{id}': non-binary label"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps only labels for the listed slice ids.
    pub fn restrict(&self, ids: &[String]) -> LabelTable {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        LabelTable {
            static_labels: self
                .static_labels
                .iter()
                .map(|(task, m)| {
                    let m = m
                        .iter()
                        .filter(|(id, _)| keep.contains(id.as_str()))
                        .map(|(id, y)| (id.clone(), *y))
                        .collect();
                    (task.clone(), m)
                })
                .collect(),
            dynamic_labels: self
                .dynamic_labels
                .iter()
                .map(|(task, m)| {
                    let m = m
                        .iter()
                        .filter(|(id, _)| keep.contains(id.as_str()))
                        .map(|(id, y)| (id.clone(), y.clone()))
                        .collect();
                    (task.clone(), m)
                })
                .collect(),
        }
    }

    /// Keeps only the named tasks.
    pub fn select_tasks(&self, tasks: &[String]) -> LabelTable {
        LabelTable {
            static_labels: self
                .static_labels
                .iter()
                .filter(|(t, _)| tasks.contains(t))
                .map(|(t, m)| (t.clone(), m.clone()))
                .collect(),
            dynamic_labels: self
                .dynamic_labels
                .iter()
                .filter(|(t, _)| tasks.contains(t))
                .map(|(t, m)| (t.clone(), m.clone()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(n: usize, prefix: &str) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn unobserved_entries_are_zeroed() {
        let t = IrregularTensor::new(
            vec![array![[1.0, 2.0]]],
            vec![array![[true, false]]],
            names(2, "f"),
            names(1, "p"),
        )
        .unwrap();
        assert_eq!(t.slice(0), &array![[1.0, 0.0]]);
        assert_eq!(t.observed_count(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = IrregularTensor::fully_observed(
            vec![array![[1.0]], array![[2.0]]],
            names(1, "f"),
            vec!["a".into(), "a".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn ragged_columns_rejected_with_slice_name() {
        let err = IrregularTensor::fully_observed(
            vec![array![[1.0, 2.0]], array![[1.0, 2.0, 3.0]]],
            names(2, "f"),
            vec!["a".into(), "b".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { slice, .. } if slice == "b"));
    }

    #[test]
    fn dynamic_label_length_checked() {
        let t = IrregularTensor::fully_observed(
            vec![array![[1.0], [2.0]]],
            names(1, "f"),
            vec!["a".into()],
        )
        .unwrap();
        let mut labels = LabelTable::default();
        labels
            .dynamic_labels
            .entry("vent".into())
            .or_default()
            .insert("a".into(), vec![0, 1, 1]);
        assert!(matches!(labels.validate(&t), Err(Error::Label(_))));
    }
}
