//! Numeric CSV tables with one categorical label column.

use std::io::Read;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which column holds the class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Last,
    /// Header name; requires a header row.
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// `last`, a zero-based index, or a header name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

/// Parses a table; features are min-max scaled per column, labels are
/// numbered in order of first appearance.
pub fn parse_csv<S: Scalar>(input: impl Read, label: &LabelColumn, has_header: bool) -> Result<Dataset<S>> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();
    let csv_err = |e: ::csv::Error| Error::Csv {
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    };

    let mut header = None;
    if has_header {
        match records.next() {
            Some(r) => header = Some(r.map_err(csv_err)?),
            None => {
                return Err(Error::Csv {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
        }
    }

    let mut width = header.as_ref().map(|h| h.len());
    let mut label_idx = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut labels = Vec::new();

    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Csv {
                line,
                msg: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        let li = match label_idx {
            Some(i) => i,
            None => {
                let i = match label {
                    LabelColumn::Last => w - 1,
                    LabelColumn::Index(i) => *i,
                    LabelColumn::Name(name) => header
                        .as_ref()
                        .and_then(|h| h.iter().position(|c| c == name))
                        .ok_or_else(|| Error::Csv {
                            line: 1,
                            msg: format!("no column named {name:?}"),
                        })?,
                };
                if i >= w || w < 2 {
                    return Err(Error::Csv {
                        line,
                        msg: format!("label column {i} out of range for {w} fields"),
                    });
                }
                columns = vec![Vec::new(); w - 1];
                *label_idx.insert(i)
            }
        };
        let mut col = 0;
        for (j, field) in rec.iter().enumerate() {
            if j == li {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Csv {
                line,
                msg: format!("non-numeric value {field:?} in column {j}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    msg: format!("non-finite value in column {j}"),
                });
            }
            columns[col].push(v);
            col += 1;
        }
        let name = &rec[li];
        let y = match names.iter().position(|n| n == name) {
            Some(y) => y,
            None => {
                names.push(name.to_string());
                names.len() - 1
            }
        };
        labels.push(y);
    }

    if labels.is_empty() {
        return Err(Error::Csv {
            line: 0,
            msg: "no data rows".into(),
        });
    }
    if names.len() < 2 {
        return Err(Error::TooFewClasses(names.len()));
    }

    let d = columns.len();
    let n = labels.len();
    let mut features = vec![S::zero(); n * d];
    for (j, col) in columns.iter().enumerate() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            log::warn!("feature column {j} is constant; scaled to 0");
            continue;
        }
        for (i, &v) in col.iter().enumerate() {
            features[i * d + j] = S::from_f64_lossy((v - lo) / (hi - lo));
        }
    }
    let mut ds = Dataset::new(vec![d], features, labels, names.len())?;
    ds.class_names = names;
    ds.normalization = "per-column min-max".into();
    Ok(ds)
}

pub fn load_csv<S: Scalar>(path: &Path, label: &LabelColumn, has_header: bool) -> Result<Dataset<S>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(std::io::BufReader::new(file), label, has_header)
}
