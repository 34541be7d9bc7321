//! CSV datasets.
//!
//! The header must hold `ystar` (values 1 or 2), covariates `x1..xp` and
//! `z1..zq` (each numbered from 1 without gaps, any order), and optionally
//! `y_true`. Intercepts are added on load.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Class, ObservedDataset};

/// A dataset as read from disk, with the true classes when present.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedDataset {
    pub data: ObservedDataset,
    pub y_true: Option<Vec<Class>>,
}

enum Column {
    Ystar,
    YTrue,
    X(usize),
    Z(usize),
}

fn parse_header(header: &csv::StringRecord) -> Result<(Vec<Column>, usize, usize)> {
    let malformed = |message: String| Error::MalformedCsv { line: 1, message };
    let mut cols = Vec::with_capacity(header.len());
    let (mut xs, mut zs) = (Vec::new(), Vec::new());
    let (mut has_ystar, mut has_ytrue) = (false, false);
    for name in header.iter() {
        let name = name.trim();
        let numbered = |prefix: char| {
            name.strip_prefix(prefix)
                .filter(|rest| !rest.is_empty() && !rest.starts_with('0'))
                .and_then(|rest| rest.parse::<usize>().ok())
        };
        let col = match name {
            "ystar" if !has_ystar => {
                has_ystar = true;
                Column::Ystar
            }
            "y_true" if !has_ytrue => {
                has_ytrue = true;
                Column::YTrue
            }
            "ystar" | "y_true" => return Err(malformed(format!("duplicate column `{name}`"))),
            _ => match (numbered('x'), numbered('z')) {
                (Some(j), _) => {
                    xs.push(j);
                    Column::X(j - 1)
                }
                (_, Some(j)) => {
                    zs.push(j);
                    Column::Z(j - 1)
                }
                _ => {
                    return Err(malformed(format!(
                        "unexpected column `{name}` (expected ystar, x1.., z1.., y_true)"
                    )))
                }
            },
        };
        cols.push(col);
    }
    if !has_ystar {
        return Err(malformed("missing column `ystar`".into()));
    }
    for (prefix, idx) in [('x', &mut xs), ('z', &mut zs)] {
        idx.sort_unstable();
        for (expect, &got) in (1..).zip(idx.iter()) {
            if got != expect {
                return Err(malformed(format!(
                    "{prefix} columns must be numbered {prefix}1..{prefix}{} without gaps or duplicates",
                    idx.len()
                )));
            }
        }
    }
    Ok((cols, xs.len(), zs.len()))
}

fn parse_class(field: &str, column: &str, line: u64) -> Result<Class> {
    field
        .trim()
        .parse::<i64>()
        .ok()
        .and_then(Class::from_label)
        .ok_or_else(|| Error::MalformedCsv {
            line,
            message: format!("`{column}` must be 1 or 2, found `{field}`"),
        })
}

/// Reads a dataset; rows with empty fields or non-numeric covariates are
/// rejected with their line number.
pub fn read_dataset<R: Read>(input: R) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    let (cols, p, q) = parse_header(&header)?;
    let has_ytrue = cols.iter().any(|c| matches!(c, Column::YTrue));

    let mut ystar = Vec::new();
    let mut y_true = Vec::new();
    let mut xv: Vec<f64> = Vec::new();
    let mut zv: Vec<f64> = Vec::new();
    let mut row_x = vec![0.0; p];
    let mut row_z = vec![0.0; q];
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != cols.len() {
            return Err(Error::MalformedCsv {
                line,
                message: format!("expected {} fields, found {}", cols.len(), record.len()),
            });
        }
        for ((col, field), name) in cols.iter().zip(record.iter()).zip(header.iter()) {
            if field.trim().is_empty() {
                return Err(Error::MalformedCsv {
                    line,
                    message: format!("empty field in column `{name}`"),
                });
            }
            let number = || -> Result<f64> {
                field
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MalformedCsv {
                        line,
                        message: format!("column `{name}`: `{field}` is not a finite number"),
                    })
            };
            match col {
                Column::Ystar => ystar.push(parse_class(field, name, line)?),
                Column::YTrue => y_true.push(parse_class(field, name, line)?),
                Column::X(j) => row_x[*j] = number()?,
                Column::Z(j) => row_z[*j] = number()?,
            }
        }
        xv.extend(&row_x);
        zv.extend(&row_z);
    }
    if ystar.is_empty() {
        return Err(Error::MalformedCsv {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let n = ystar.len();
    let x = DMatrix::from_row_slice(n, p, &xv);
    let z = DMatrix::from_row_slice(n, q, &zv);
    Ok(LoadedDataset {
        data: ObservedDataset::new(ystar, x, z)?,
        y_true: has_ytrue.then_some(y_true),
    })
}

/// Writes `ystar, x1.., z1..` and `y_true` when given.
pub fn write_dataset<W: Write>(data: &ObservedDataset, y_true: Option<&[Class]>, out: W) -> Result<()> {
    if let Some(y) = y_true {
        if y.len() != data.n() {
            return Err(Error::DimensionMismatch {
                block: "y_true",
                expected: data.n(),
                got: y.len(),
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let p = data.x_dim() - 1;
    let q = data.z_dim() - 1;
    let mut header = vec!["ystar".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    header.extend((1..=q).map(|j| format!("z{j}")));
    if y_true.is_some() {
        header.push("y_true".into());
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        row.clear();
        row.push(data.ystar()[i].label().to_string());
        row.extend((1..=p).map(|j| data.x()[(i, j)].to_string()));
        row.extend((1..=q).map(|j| data.z()[(i, j)].to_string()));
        if let Some(y) = y_true {
            row.push(y[i].label().to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let text = "ystar,x1,z1,y_true\n1,0.1,2.5,1\n2,-1.25,0.3333333333333333,1\n1,3,1e-7,2\n";
        let loaded = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(loaded.data.n(), 3);
        assert_eq!(loaded.y_true.as_deref(), Some(&[Class::One, Class::One, Class::Two][..]));
        let mut buf = Vec::new();
        write_dataset(&loaded.data, loaded.y_true.as_deref(), &mut buf).unwrap();
        let again = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(again, loaded);
    }

    #[test]
    fn column_order_is_free() {
        let a = read_dataset("z1,ystar,x2,x1\n0.5,2,7,8\n".as_bytes()).unwrap();
        assert_eq!(a.data.x()[(0, 1)], 8.0);
        assert_eq!(a.data.x()[(0, 2)], 7.0);
        assert_eq!(a.data.z()[(0, 1)], 0.5);
        assert!(a.y_true.is_none());
    }

    #[test]
    fn empty_field_reports_line() {
        let err = read_dataset("ystar,x1,z1\n1,0.5,1\n2,,1\n".as_bytes()).unwrap_err();
        match err {
            Error::MalformedCsv { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("x1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        for text in [
            "x1,z1\n0.5,1\n",
            "ystar,x1,z1,w\n1,0.5,1,0\n",
            "ystar,x2,z1\n1,0.5,1\n",
            "ystar,x1,z1\n3,0.5,1\n",
            "ystar,x1,z1\n1,abc,1\n",
            "ystar,x1,z1\n1,NaN,1\n",
            "ystar,x1,z1\n",
            "ystar,ystar,x1\n1,1,0\n",
        ] {
            assert!(
                matches!(read_dataset(text.as_bytes()), Err(Error::MalformedCsv { .. } | Error::Csv(_))),
                "accepted {text:?}"
            );
        }
    }
}
