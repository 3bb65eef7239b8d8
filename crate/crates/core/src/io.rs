//! Plain-text matrix and JSON helpers shared by the file formats.
//!
//! Reals are written in the shortest decimal form that parses back to the
//! same `f64`, so every write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Shortest round-trip decimal; exponent form outside `[1e-5, 1e16)`.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn parse_f64(field: &str, context: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        context: context.to_string(),
        message: format!("{field:?}: {e}"),
    })
}

pub fn parse_usize(field: &str, context: &str) -> Result<usize> {
    field.trim().parse::<usize>().map_err(|e| Error::Parse {
        context: context.to_string(),
        message: format!("{field:?}: {e}"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixDims {
    pub rows: usize,
    pub cols: usize,
}

pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 12);
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|&x| format_f64(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str, dims: MatrixDims) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(dims.rows * dims.cols);
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let context = format!("matrix csv line {}", lineno + 1);
        let before = data.len();
        for field in line.split(',') {
            data.push(parse_f64(field, &context)?);
        }
        if data.len() - before != dims.cols {
            return Err(Error::Parse {
                context,
                message: format!("expected {} columns, got {}", dims.cols, data.len() - before),
            });
        }
        rows += 1;
    }
    if rows != dims.rows {
        return Err(Error::Parse {
            context: "matrix csv".into(),
            message: format!("expected {} rows, got {rows}", dims.rows),
        });
    }
    DenseMatrix::new(dims.rows, dims.cols, data)
}

/// Writes `m` as headerless CSV plus a `{rows, cols}` JSON sidecar.
pub fn write_matrix(m: &DenseMatrix, csv_path: &Path, json_path: &Path) -> Result<()> {
    fs::write(csv_path, matrix_to_csv(m))?;
    write_json(
        json_path,
        &MatrixDims {
            rows: m.rows(),
            cols: m.cols(),
        },
    )
}

pub fn read_matrix(csv_path: &Path, json_path: &Path) -> Result<DenseMatrix> {
    let dims: MatrixDims = read_json(json_path)?;
    matrix_from_csv(&fs::read_to_string(csv_path)?, dims)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// `foo.csv` -> `foo.json`.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, prop_assume, proptest};

    proptest! {
        #[test]
        fn format_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back = parse_f64(&format_f64(x), "test").unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = DenseMatrix::new(2, 3, vec![0.1, -2.5e-300, 3.0, 1e20, -0.0, 7.25]).unwrap();
        let back = matrix_from_csv(&matrix_to_csv(&m), MatrixDims { rows: 2, cols: 3 }).unwrap();
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_csv_rejects_ragged_rows() {
        let err = matrix_from_csv("1,2\n3\n", MatrixDims { rows: 2, cols: 2 });
        assert!(matches!(err, Err(Error::Parse { .. })));
    }
}
