//! Output tables.  Every numeric file is CSV with a one-line header and
//! 17-significant-digit values, so identical runs produce byte-identical
//! files; coordinates are repeated in leading key columns to keep each file
//! self-describing.

use nalgebra::DVector;
use std::path::Path;

use hdsa_core::io::{fmt_f64, write_csv_columns};
use hdsa_core::optim::OptimizationResult;

/// Coordinate layout of the benchmark's two vector spaces.
pub enum OutputLayout {
    /// 1D mesh: optimization and state vectors both live on the nodes.
    Interval { x: DVector<f64> },
    /// Time grid controller with a stacked `(x1, x1')` state.
    TimeStacked { t: DVector<f64> },
    /// Source-amplitude controller over a 2D mesh state.
    PlaneParam {
        x: DVector<f64>,
        y: DVector<f64>,
        source_x: DVector<f64>,
        source_y: DVector<f64>,
    },
}

impl OutputLayout {
    /// Write optimization-space vectors with their coordinate key columns.
    pub fn write_opt_table(
        &self,
        path: &Path,
        names: &[String],
        vectors: &[&DVector<f64>],
    ) -> std::io::Result<()> {
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        match self {
            Self::Interval { x } => {
                let mut headers = vec!["x"];
                headers.extend(name_refs);
                let mut cols = vec![x];
                cols.extend(vectors);
                write_csv_columns(path, &headers, &cols)
            }
            Self::TimeStacked { t } => {
                let mut headers = vec!["t"];
                headers.extend(name_refs);
                let mut cols = vec![t];
                cols.extend(vectors);
                write_csv_columns(path, &headers, &cols)
            }
            Self::PlaneParam {
                source_x, source_y, ..
            } => {
                let mut headers = vec!["source_x", "source_y"];
                headers.extend(name_refs);
                let mut cols = vec![source_x, source_y];
                cols.extend(vectors);
                write_csv_columns(path, &headers, &cols)
            }
        }
    }

    /// Write state-space vectors with their coordinate key columns.  The
    /// stacked time layout splits each vector into `_x1` / `_x1_dot` pairs.
    pub fn write_state_table(
        &self,
        path: &Path,
        names: &[String],
        vectors: &[&DVector<f64>],
    ) -> std::io::Result<()> {
        match self {
            Self::Interval { x } => {
                let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let mut headers = vec!["x"];
                headers.extend(name_refs);
                let mut cols = vec![x];
                cols.extend(vectors);
                write_csv_columns(path, &headers, &cols)
            }
            Self::TimeStacked { t } => {
                let n = t.len();
                let mut headers_owned = vec!["t".to_string()];
                let mut split: Vec<DVector<f64>> = Vec::with_capacity(2 * vectors.len());
                for (name, v) in names.iter().zip(vectors) {
                    assert_eq!(v.len(), 2 * n, "stacked state length");
                    headers_owned.push(format!("{name}_x1"));
                    headers_owned.push(format!("{name}_x1_dot"));
                    split.push(v.rows(0, n).into_owned());
                    split.push(v.rows(n, n).into_owned());
                }
                let headers: Vec<&str> = headers_owned.iter().map(String::as_str).collect();
                let mut cols: Vec<&DVector<f64>> = vec![t];
                cols.extend(split.iter());
                write_csv_columns(path, &headers, &cols)
            }
            Self::PlaneParam { x, y, .. } => {
                let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let mut headers = vec!["x", "y"];
                headers.extend(name_refs);
                let mut cols = vec![x, y];
                cols.extend(vectors);
                write_csv_columns(path, &headers, &cols)
            }
        }
    }
}

/// Numbered column names `prefix_0 .. prefix_{count-1}`.
pub fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|k| format!("{prefix}_{k}")).collect()
}

/// A two-column `name,value` CSV for scalar markers.
pub fn write_named_values(path: &Path, rows: &[(String, f64)]) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "name,value")?;
    for (name, value) in rows {
        writeln!(out, "{name},{}", fmt_f64(*value))?;
    }
    out.flush()
}

/// Plain-text trust-region iteration log plus a termination summary.
pub fn write_iteration_log(path: &Path, result: &OptimizationResult) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "{:>4}  {:>24}  {:>13}  {:>13}  {:>8}  {:>13}  {:>13}  {:>8}",
        "iter", "objective", "grad_norm", "radius", "cg_iters", "step_norm", "ratio", "accepted"
    )?;
    for rec in &result.iterations {
        writeln!(
            out,
            "{:>4}  {:>24}  {:>13.6e}  {:>13.6e}  {:>8}  {:>13.6e}  {:>13.6e}  {:>8}",
            rec.iter,
            fmt_f64(rec.objective),
            rec.gradient_norm,
            rec.radius,
            rec.cg_iters,
            rec.step_norm,
            rec.ratio,
            rec.accepted
        )?;
    }
    writeln!(
        out,
        "converged={} objective={} gradient_norm={:.6e} iterations={}",
        result.converged,
        fmt_f64(result.objective),
        result.gradient_norm,
        result.iterations.len()
    )?;
    out.flush()
}
