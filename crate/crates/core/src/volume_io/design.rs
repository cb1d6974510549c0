//! Plain-text design matrices: one scan per row, one covariate per column.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dlm::DesignMatrix;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses whitespace- or comma-separated numeric rows; blank lines and
/// lines starting with `#` are skipped.
pub fn parse_design(text: &str, path: &Path) -> Result<DesignMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains(',') {
            trimmed.split(',').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let mut row = Vec::with_capacity(fields.len());
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, format!("'{field}' is not finite")));
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(path, line_no, format!("expected {w} columns, found {}", row.len())))
            }
            _ => {}
        }
        rows.push(row);
    }
    let Some(p) = width else {
        return Err(parse_err(path, 0, "design matrix is empty"));
    };
    let t = rows.len();
    let m = DMatrix::from_fn(t, p, |r, c| rows[r][c]);
    DesignMatrix::new(m)
}

pub fn read_design(path: impl AsRef<Path>) -> Result<DesignMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_design(&text, path)
}

/// Whitespace-separated text with shortest round-tripping floats.
pub fn format_design(design: &DesignMatrix) -> String {
    let rows = &design.rows;
    let mut out = String::new();
    for r in 0..rows.nrows() {
        for c in 0..rows.ncols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", rows[(r, c)]);
        }
        out.push('\n');
    }
    out
}

pub fn write_design(design: &DesignMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_design(design)).map_err(|e| Error::io(path, e))
}
