//! Plain-text matrix exchange format used by every tool in this workspace.
//!
//! First line: `rows cols`. Then row-major entries in scientific notation
//! with 17 significant digits, whitespace-separated. 17 digits identify a
//! double uniquely, so write/read round-trips are bit-exact.

use crate::error::{Error, Result};
use crate::linops::{Matrix, Vector};
use std::fmt::Write as _;
use std::path::Path;

/// Renders a matrix in the exchange format.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::with_capacity(16 + 25 * m.len());
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.16e}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Writes a matrix to `path` in the exchange format.
pub fn write_matrix<P: AsRef<Path>>(path: P, m: &Matrix) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

/// Parses a matrix from exchange-format text.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut tokens = text.split_whitespace();
    let rows: usize = tokens
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad row count: {e}")))?;
    let cols: usize = tokens
        .next()
        .ok_or_else(|| Error::Parse("missing column count".into()))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad column count: {e}")))?;
    let mut data = Vec::with_capacity(rows * cols);
    for tok in tokens.by_ref().take(rows * cols) {
        let v: f64 = tok
            .parse()
            .map_err(|e| Error::Parse(format!("bad entry {tok:?}: {e}")))?;
        data.push(v);
    }
    if data.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} entries, found {}",
            rows * cols,
            data.len()
        )));
    }
    if tokens.next().is_some() {
        return Err(Error::Parse("trailing data after matrix entries".into()));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

/// Reads a matrix from `path`.
pub fn read_matrix<P: AsRef<Path>>(path: P) -> Result<Matrix> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_matrix(&text)
}

/// Writes a vector as an n-by-1 matrix.
pub fn write_vector<P: AsRef<Path>>(path: P, v: &Vector) -> Result<()> {
    let m = Matrix::from_column_slice(v.len(), 1, v.as_slice());
    write_matrix(path, &m)
}

/// Reads an n-by-1 or 1-by-n matrix as a vector.
pub fn read_vector<P: AsRef<Path>>(path: P) -> Result<Vector> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 && m.nrows() != 1 {
        return Err(Error::Parse(format!(
            "expected a vector, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(Vector::from_iterator(m.len(), m.iter().copied()))
}
