//! Plain-text table output.
//!
//! All numeric output uses 17 significant digits so that files parse back to
//! the exact f64 that produced them; identical runs produce byte-identical
//! files.

use nalgebra::{DMatrix, DVector};
use std::io::Write;
use std::path::Path;

/// Render an f64 with 17 significant digits (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Write `columns` side by side as CSV with the given header names.
pub fn write_csv_columns(
    path: &Path,
    headers: &[&str],
    columns: &[&DVector<f64>],
) -> std::io::Result<()> {
    assert_eq!(headers.len(), columns.len());
    let nrows = columns.first().map_or(0, |c| c.len());
    for c in columns {
        assert_eq!(c.len(), nrows, "ragged columns");
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", headers.join(","))?;
    for i in 0..nrows {
        let row: Vec<String> = columns.iter().map(|c| fmt_f64(c[i])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}

/// Write a matrix as CSV, one row per matrix row, with generated headers
/// `prefix0, prefix1, ...`.
pub fn write_csv_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let headers: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    writeln!(out, "{}", headers.join(","))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}

/// Read back a CSV written by the writers above (header skipped).
pub fn read_csv_matrix(path: &Path) -> std::io::Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse()).collect();
        rows.push(row.map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad float: {e}"))
        })?);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let m = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64).sin() * 1e-7);
        write_csv_matrix(&path, "c", &m).unwrap();
        let back = read_csv_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(1.0 / 3.0), "3.3333333333333331e-1");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
