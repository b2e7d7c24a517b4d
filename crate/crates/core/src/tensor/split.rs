use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{IrregularTensor, LabelTable};
use crate::error::{Error, Result};

/// One side of a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub tensor: IrregularTensor,
    pub labels: LabelTable,
}

/// Seeded slice-level split. The training side receives
/// `ceil(train_fraction * K)` slices, clamped so both sides are non-empty;
/// each side keeps the original relative slice order.
pub fn split_tensor(
    tensor: &IrregularTensor,
    labels: &LabelTable,
    train_fraction: f64,
    seed: u64,
) -> Result<(Partition, Partition)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let k = tensor.n_slices();
    if k < 2 {
        return Err(Error::config("splitting needs at least two slices"));
    }
    let n_train = ((train_fraction * k as f64).ceil() as usize).clamp(1, k - 1);

    let mut order: Vec<usize> = (0..k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (train, test) = order.split_at(n_train);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();

    let side = |positions: &[usize]| -> Result<Partition> {
        let t = tensor.subset(positions)?;
        let labels = labels.restrict(t.slice_ids());
        Ok(Partition { tensor: t, labels })
    };
    Ok((side(&train)?, side(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::HashSet;

    fn tensor(k: usize) -> IrregularTensor {
        IrregularTensor::fully_observed(
            (0..k).map(|i| Array2::from_elem((1, 1), i as f64)).collect(),
            vec!["f".into()],
            (0..k).map(|i| format!("s{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn eight_two_proportion() {
        let (tr, te) = split_tensor(&tensor(10), &LabelTable::default(), 0.8, 1).unwrap();
        assert_eq!(tr.tensor.n_slices(), 8);
        assert_eq!(te.tensor.n_slices(), 2);
    }

    #[test]
    fn deterministic_disjoint_exhaustive() {
        let t = tensor(13);
        let a = split_tensor(&t, &LabelTable::default(), 0.7, 42).unwrap();
        let b = split_tensor(&t, &LabelTable::default(), 0.7, 42).unwrap();
        assert_eq!(a, b);
        let tr: HashSet<_> = a.0.tensor.slice_ids().iter().collect();
        let te: HashSet<_> = a.1.tensor.slice_ids().iter().collect();
        assert!(tr.is_disjoint(&te));
        assert_eq!(tr.len() + te.len(), 13);
    }

    #[test]
    fn two_slices_half_split() {
        let (tr, te) = split_tensor(&tensor(2), &LabelTable::default(), 0.5, 0).unwrap();
        assert_eq!((tr.tensor.n_slices(), te.tensor.n_slices()), (1, 1));
    }

    #[test]
    fn fraction_out_of_range() {
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                split_tensor(&tensor(4), &LabelTable::default(), f, 0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn labels_follow_their_slices() {
        let t = tensor(6);
        let mut labels = LabelTable::default();
        let m = labels.static_labels.entry("y".into()).or_default();
        for id in t.slice_ids() {
            m.insert(id.clone(), 1);
        }
        let (tr, te) = split_tensor(&t, &labels, 0.5, 9).unwrap();
        for part in [&tr, &te] {
            let ids: HashSet<_> = part.tensor.slice_ids().iter().cloned().collect();
            let lab: HashSet<_> = part.labels.static_labels["y"].keys().cloned().collect();
            assert_eq!(ids, lab);
        }
    }
}
