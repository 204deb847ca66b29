//! Headerless numeric CSV used by dumps and corrector files.
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`, one row per line, LF endings. Re-emitting a loaded file is therefore
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn csv_error(path: &Path, row: usize, err: csv::Error) -> Error {
    Error::Parse {
        file: file_label(path),
        row,
        col: 0,
        message: err.to_string(),
    }
}

/// Reads a float matrix. `cols` fixes the expected width when known.
pub fn read_matrix(path: &Path, cols: Option<usize>) -> Result<Array2<f64>> {
    let label = file_label(path);
    let mut data = Vec::new();
    let mut width = cols;
    let mut rows = 0;
    for (row, record) in reader(path)?.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, row, e))?;
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::DimensionMismatch(format!(
                "{label} row {row} has {} columns, expected {w}",
                record.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: label.clone(),
                row,
                col,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    file: label.clone(),
                    row,
                    col,
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    Array2::from_shape_vec((rows, width), data)
        .map_err(|e| Error::DimensionMismatch(format!("{label}: {e}")))
}

/// Reads one integer per line.
pub fn read_integers(path: &Path) -> Result<Vec<i64>> {
    let label = file_label(path);
    let mut out = Vec::new();
    for (row, record) in reader(path)?.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, row, e))?;
        if record.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "{label} row {row} has {} columns, expected 1",
                record.len()
            )));
        }
        let field = &record[0];
        let v = field.trim().parse().map_err(|_| Error::Parse {
            file: label.clone(),
            row,
            col: 0,
            message: format!("not an integer: {field:?}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Shortest round-trip decimal representation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn matrix_to_string(m: ArrayView2<f64>) -> String {
    let mut s = String::with_capacity(m.len() * 12);
    for row in m.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&fmt_float(*v));
        }
        s.push('\n');
    }
    s
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    write_string(path, &matrix_to_string(m))
}

pub fn write_integers<T: std::fmt::Display>(path: &Path, values: &[T]) -> Result<()> {
    let mut s = String::with_capacity(values.len() * 3);
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    write_string(path, &s)
}

pub fn write_floats(path: &Path, values: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(values.len() * 12);
    for v in values {
        s.push_str(&fmt_float(*v));
        s.push('\n');
    }
    write_string(path, &s)
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
