//! JSON checkpoint: `{"R", "H", "V", "slices": [{"id", "Q", "s"}], "heads"}`,
//! matrices stored row-major as nested arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::FactorModel;
use crate::error::{Error, Result};
use crate::heads::{matrix, rows, HeadsRecord, TaskSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceFactors {
    pub id: String,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    #[serde(rename = "R")]
    pub rank: usize,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub slices: Vec<SliceFactors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<HeadsRecord>,
}

impl Checkpoint {
    pub fn from_model(m: &FactorModel, slice_ids: &[String], heads: Option<&TaskSet>) -> Result<Self> {
        if slice_ids.len() != m.n_slices() {
            return Err(Error::config(format!(
                "{} slice ids for {} slices",
                slice_ids.len(),
                m.n_slices()
            )));
        }
        Ok(Self {
            rank: m.rank,
            h: rows(&m.h),
            v: rows(&m.v),
            slices: slice_ids
                .iter()
                .zip(m.q.iter().zip(&m.s))
                .map(|(id, (q, s))| SliceFactors {
                    id: id.clone(),
                    q: rows(q),
                    s: s.to_vec(),
                })
                .collect(),
            heads: heads.filter(|h| !h.is_empty()).map(TaskSet::to_record),
        })
    }

    /// Rebuilds the model with `U_k = Q_k H`.
    pub fn to_model(&self) -> Result<FactorModel> {
        let r = self.rank;
        if r == 0 {
            return Err(Error::config("checkpoint rank must be at least 1"));
        }
        let h = matrix(&self.h, r, r).ok_or_else(|| Error::config("H is not R×R"))?;
        let j = self.v.len();
        let v = matrix(&self.v, j, r).ok_or_else(|| Error::config("V is not J×R"))?;
        let mut q = Vec::with_capacity(self.slices.len());
        let mut s = Vec::with_capacity(self.slices.len());
        for sl in &self.slices {
            let qk = matrix(&sl.q, sl.q.len(), r)
                .filter(|a| a.nrows() > 0)
                .ok_or_else(|| Error::shape(&sl.id, "Q is not I_k×R"))?;
            if sl.s.len() != r {
                return Err(Error::shape(&sl.id, format!("s has length {}, expected {r}", sl.s.len())));
            }
            q.push(qk);
            s.push(Array1::from(sl.s.clone()));
        }
        FactorModel::new(q, h, s, v)
    }

    pub fn slice_ids(&self) -> Vec<String> {
        self.slices.iter().map(|s| s.id.clone()).collect()
    }

    pub fn task_set(&self) -> Result<TaskSet> {
        match &self.heads {
            Some(rec) => TaskSet::from_record(rec, self.rank),
            None => Ok(TaskSet::default()),
        }
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_preserves_factors() {
        let m = FactorModel::new(
            vec![array![[1.0, 0.0], [0.0, 1.0], [0.1, -0.2]]],
            array![[1.0, 0.25], [0.0, 1.5]],
            vec![array![0.3, 0.1 + 0.2]],
            array![[1.0, 2.0], [3.0, 4.0]],
        )
        .unwrap();
        let ck = Checkpoint::from_model(&m, &["a".into()], None).unwrap();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"R":1,"H":[[1]],"V":[[1]],"slices":[],"extra":1}"#;
        assert!(Checkpoint::read(text.as_bytes()).is_err());
    }

    #[test]
    fn ragged_q_is_a_shape_error() {
        let text = r#"{"R":2,"H":[[1,0],[0,1]],"V":[[1,0]],"slices":[{"id":"a","Q":[[1,0],[1]],"s":[1,1]}]}"#;
        let ck = Checkpoint::read(text.as_bytes()).unwrap();
        assert!(matches!(ck.to_model(), Err(Error::Shape { .. })));
    }
}
