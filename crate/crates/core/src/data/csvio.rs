use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nncore::Matrix;

/// Reads `label,f1,...,fd` rows. A first row whose first field is not numeric
/// is taken as a header. Row numbers in errors are 1-based file rows.
///
/// With `num_classes = None` the class count is `max label + 1`.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(path, e))?;
        let first = record.get(0).unwrap_or("");
        if i == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        let label: usize = first.parse().map_err(|_| Error::Parse {
            row,
            message: format!("label `{first}` is not a non-negative integer"),
        })?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(Error::Parse {
                    row,
                    message: format!("label {label} out of range for {c} classes"),
                });
            }
        }
        let d = record.len() - 1;
        match dim {
            None if d == 0 => {
                return Err(Error::Parse {
                    row,
                    message: "row has no features".into(),
                });
            }
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    row,
                    message: format!("ragged row: {d} features, expected {expected}"),
                });
            }
            Some(_) => {}
        }
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: format!("feature `{field}` is not a finite number"),
                })?;
            features.push(v);
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        row: 0,
        message: "no data rows".into(),
    })?;
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(Matrix::from_vec(labels.len(), dim, features)?, labels, classes)
}

/// Writes a header row (`label,f0,...`) followed by one row per sample.
/// Floats use the shortest representation that parses back exactly.
pub fn write_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "label").map_err(io)?;
    for j in 0..data.dim() {
        write!(w, ",f{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        write!(w, "{y}").map_err(io)?;
        for v in x {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Partition summary: one `client,class,count` row per client and class.
pub fn write_partition_csv(path: &Path, clients: &[LabeledDataset]) -> Result<()> {
    let mut out = String::from("client,class,count\n");
    for (k, d) in clients.iter().enumerate() {
        for (c, n) in d.class_counts().iter().enumerate() {
            out.push_str(&format!("{k},{c},{n}\n"));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.record() as usize + 1);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row,
            message: format!("{other:?}"),
        },
    }
}
