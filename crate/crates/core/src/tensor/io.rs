//! JSON Lines tensor files and CSV label files.
//!
//! Tensor file: the first line is `{"features": [...]}`; every following
//! non-blank line is `{"id": ..., "rows": [[...], ...], "mask": [[0|1, ...], ...]}`
//! with `mask` optional (all observed when absent).
//!
//! Label file: CSV with header `slice_id,task,kind,t,label`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{IrregularTensor, LabelTable};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    features: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SliceRecord {
    id: String,
    rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<Vec<u8>>>,
}

fn format_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        line,
        msg: msg.into(),
    }
}

pub fn read_tensor_jsonl<R: BufRead>(reader: R) -> Result<IrregularTensor> {
    let mut lines = reader.lines().enumerate();
    let features = loop {
        match lines.next() {
            None => return Err(format_err(1, "missing header line")),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let header: Header = serde_json::from_str(&line)
                    .map_err(|e| format_err(i + 1, format!("bad header: {e}")))?;
                break header.features;
            }
        }
    };
    let j = features.len();

    let mut slices = Vec::new();
    let mut masks = Vec::new();
    let mut ids = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SliceRecord = serde_json::from_str(&line)
            .map_err(|e| format_err(lineno, format!("bad slice record: {e}")))?;
        if rec.rows.is_empty() {
            return Err(Error::shape(&rec.id, "slice has no rows"));
        }
        let n = rec.rows.len();
        let mut x = Array2::zeros((n, j));
        for (r, row) in rec.rows.iter().enumerate() {
            if row.len() != j {
                return Err(Error::shape(
                    &rec.id,
                    format!("row {r} has {} values, expected {j}", row.len()),
                ));
            }
            for (c, &v) in row.iter().enumerate() {
                x[[r, c]] = v;
            }
        }
        let mask = match rec.mask {
            None => Array2::from_elem((n, j), true),
            Some(m) => {
                if m.len() != n {
                    return Err(Error::shape(
                        &rec.id,
                        format!("mask has {} rows, slice has {n}", m.len()),
                    ));
                }
                let mut out = Array2::from_elem((n, j), false);
                for (r, row) in m.iter().enumerate() {
                    if row.len() != j {
                        return Err(Error::shape(
                            &rec.id,
                            format!("mask row {r} has {} values, expected {j}", row.len()),
                        ));
                    }
                    for (c, &b) in row.iter().enumerate() {
                        out[[r, c]] = match b {
                            0 => false,
                            1 => true,
                            _ => return Err(format_err(lineno, "mask entries must be 0 or 1")),
                        };
                    }
                }
                out
            }
        };
        slices.push(x);
        masks.push(mask);
        ids.push(rec.id);
    }
    IrregularTensor::new(slices, masks, features, ids)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<IrregularTensor> {
    read_tensor_jsonl(BufReader::new(File::open(path)?))
}

/// Writes the tensor in the JSON Lines layout. A mask is emitted only for
/// slices that have unobserved entries.
pub fn write_tensor_jsonl<W: Write>(tensor: &IrregularTensor, mut w: W) -> Result<()> {
    serde_json::to_writer(
        &mut w,
        &Header {
            features: tensor.feature_names().to_vec(),
        },
    )?;
    writeln!(w)?;
    for k in 0..tensor.n_slices() {
        let x = tensor.slice(k);
        let m = tensor.mask(k);
        let rows = x.outer_iter().map(|r| r.to_vec()).collect();
        let mask = if m.iter().all(|&b| b) {
            None
        } else {
            Some(
                m.outer_iter()
                    .map(|r| r.iter().map(|&b| b as u8).collect())
                    .collect(),
            )
        };
        let rec = SliceRecord {
            id: tensor.slice_ids()[k].clone(),
            rows,
            mask,
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_tensor(tensor: &IrregularTensor, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_jsonl(tensor, BufWriter::new(File::create(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    slice_id: String,
    task: String,
    kind: String,
    t: Option<usize>,
    label: u8,
}

const LABEL_HEADER: [&str; 5] = ["slice_id", "task", "kind", "t", "label"];

/// Parses a label CSV without reference to a tensor. Dynamic sequences must
/// cover timesteps `0..n` exactly once; call [`LabelTable::validate`] to
/// check them against a tensor.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<LabelTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(LABEL_HEADER.iter().copied()) {
        return Err(format_err(1, format!("label header must be {}", LABEL_HEADER.join(","))));
    }
    let mut table = LabelTable::default();
    let mut dynamic: BTreeMap<String, BTreeMap<String, BTreeMap<usize, u8>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            format_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: LabelRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| format_err(line, e.to_string()))?;
        if row.label > 1 {
            return Err(format_err(line, format!("label {} is not 0 or 1", row.label)));
        }
        match row.kind.as_str() {
            "static" => {
                if row.t.is_some() {
                    return Err(format_err(line, "static label must leave t empty"));
                }
                let prev = table
                    .static_labels
                    .entry(row.task)
                    .or_default()
                    .insert(row.slice_id.clone(), row.label);
                if prev.is_some() {
                    return Err(format_err(
                        line,
                        format!("duplicate static label for slice '{}'", row.slice_id),
                    ));
                }
            }
            "dynamic" => {
                let t = row
                    .t
                    .ok_or_else(|| format_err(line, "dynamic label needs a timestep t"))?;
                let prev = dynamic
                    .entry(row.task)
                    .or_default()
                    .entry(row.slice_id.clone())
                    .or_default()
                    .insert(t, row.label);
                if prev.is_some() {
                    return Err(format_err(
                        line,
                        format!("duplicate dynamic label for slice '{}' at t={t}", row.slice_id),
                    ));
                }
            }
            other => return Err(format_err(line, format!("unknown kind '{other}'"))),
        }
    }
    for (task, by_slice) in dynamic {
        let mut out = BTreeMap::new();
        for (id, steps) in by_slice {
            let n = steps.len();
            if steps.keys().copied().ne(0..n) {
                return Err(Error::Label(format!(
                    "task '{task}', slice '{id}': timesteps are not 0..{n}"
                )));
            }
            out.insert(id, steps.into_values().collect());
        }
        table.dynamic_labels.insert(task, out);
    }
    for task in table.static_labels.keys() {
        if table.dynamic_labels.contains_key(task) {
            return Err(Error::Label(format!(
                "task '{task}' is declared both static and dynamic"
            )));
        }
    }
    Ok(table)
}

pub fn load_labels(path: impl AsRef<Path>, tensor: &IrregularTensor) -> Result<LabelTable> {
    let table = read_labels_csv(File::open(path)?)?;
    table.validate(tensor)?;
    Ok(table)
}

pub fn write_labels_csv<W: Write>(labels: &LabelTable, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(LABEL_HEADER)?;
    for (task, by_slice) in &labels.static_labels {
        for (id, y) in by_slice {
            wtr.write_record([id.as_str(), task, "static", "", &y.to_string()])?;
        }
    }
    for (task, by_slice) in &labels.dynamic_labels {
        for (id, seq) in by_slice {
            for (t, y) in seq.iter().enumerate() {
                wtr.write_record([id.as_str(), task, "dynamic", &t.to_string(), &y.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_labels(labels: &LabelTable, path: impl AsRef<Path>) -> Result<()> {
    write_labels_csv(labels, BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "{\"features\":[\"hr\",\"bp\"]}\n\
        {\"id\":\"a\",\"rows\":[[1,2],[3,4],[5,6]]}\n\
        {\"id\":\"b\",\"rows\":[[7,8]],\"mask\":[[1,0]]}\n";

    #[test]
    fn loads_shapes_and_default_mask() {
        let t = read_tensor_jsonl(TWO.as_bytes()).unwrap();
        assert_eq!(t.n_slices(), 2);
        assert_eq!(t.n_features(), 2);
        assert_eq!(t.row_counts(), vec![3, 1]);
        assert!(t.mask(0).iter().all(|&m| m));
        assert_eq!(t.observed_count(), 7);
        assert_eq!(t.slice(1)[[0, 1]], 0.0);
    }

    #[test]
    fn ragged_rows_are_a_shape_error() {
        let src = "{\"features\":[\"x\",\"y\"]}\n{\"id\":\"z\",\"rows\":[[1,2],[1,2,3]]}\n";
        let err = read_tensor_jsonl(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Shape { slice, .. } if slice == "z"));
    }

    #[test]
    fn malformed_record_names_line() {
        let src = "{\"features\":[\"x\"]}\n{\"id\":\"a\",\"rows\":[[1]]}\n{\"id\":\"b\",\"rows\":oops}\n";
        let err = read_tensor_jsonl(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let src = "{\"features\":[\"x\"]}\n{\"id\":\"a\",\"rows\":[[1]]}\n{\"id\":\"a\",\"rows\":[[2]]}\n";
        assert!(matches!(
            read_tensor_jsonl(src.as_bytes()),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn missing_header_is_format_error() {
        let src = "{\"id\":\"a\",\"rows\":[[1]]}\n";
        assert!(matches!(
            read_tensor_jsonl(src.as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn labels_parse_static_and_dynamic() {
        let t = read_tensor_jsonl(TWO.as_bytes()).unwrap();
        let csv = "slice_id,task,kind,t,label\n\
            a,mortality,static,,1\n\
            b,mortality,static,,0\n\
            b,vent,dynamic,0,1\n";
        let labels = read_labels_csv(csv.as_bytes()).unwrap();
        labels.validate(&t).unwrap();
        assert_eq!(labels.static_labels["mortality"]["a"], 1);
        assert_eq!(labels.dynamic_labels["vent"]["b"], vec![1]);
    }

    #[test]
    fn label_gaps_and_bad_kinds_rejected() {
        let gap = "slice_id,task,kind,t,label\na,vent,dynamic,1,1\n";
        assert!(read_labels_csv(gap.as_bytes()).is_err());
        let kind = "slice_id,task,kind,t,label\na,vent,weird,,1\n";
        assert!(matches!(
            read_labels_csv(kind.as_bytes()),
            Err(Error::Format { .. })
        ));
        let header = "id,task,kind,t,label\n";
        assert!(read_labels_csv(header.as_bytes()).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let csv = "slice_id,task,kind,t,label\n\
            a,mortality,static,,1\n\
            b,vent,dynamic,0,1\n\
            b,vent,dynamic,1,0\n";
        let labels = read_labels_csv(csv.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_labels_csv(&labels, &mut out).unwrap();
        assert_eq!(read_labels_csv(out.as_slice()).unwrap(), labels);
    }
}
