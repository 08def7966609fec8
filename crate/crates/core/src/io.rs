//! Plain-text and CSV serialization of matrices and result rows.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Format a matrix as whitespace-separated rows of decimals (row-major).
pub fn matrix_to_text(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{:.17e}", m[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parse a matrix from whitespace-separated rows (one row per line;
/// blank lines and `#` comments ignored).
pub fn matrix_from_text(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} entries, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no matrix rows found".into()));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, matrix_to_text(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    matrix_from_text(&text)
}

/// Minimal CSV writer: quoting is applied only when a field contains a
/// comma or quote, which keeps numeric bodies byte-stable across runs.
pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut w = CsvWriter { buf: String::new() };
        w.write_row(header);
        w
    }

    pub fn write_row<S: AsRef<str>>(&mut self, fields: &[S]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            let f = f.as_ref();
            if f.contains(',') || f.contains('"') {
                self.buf.push('"');
                self.buf.push_str(&f.replace('"', "\"\""));
                self.buf.push('"');
            } else {
                self.buf.push_str(f);
            }
        }
        self.buf.push('\n');
    }

    pub fn body(&self) -> &str {
        &self.buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.buf)?;
        Ok(())
    }
}

/// Canonical float formatting used in all CSV bodies (17 significant
/// digits, round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}
